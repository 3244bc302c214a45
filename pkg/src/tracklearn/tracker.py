"""Constant-velocity Kalman multi-target tracker with gated optimal assignment."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .exceptions import InsufficientDataError, InvalidArgumentError, NumericalFailureError

TENTATIVE = "tentative"
CONFIRMED = "confirmed"
DEAD = "dead"

GATE_CHI2_99_2DOF = 9.21

H = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])


@dataclass(frozen=True)
class TrackerConfig:
    process_noise: float = 0.5  # white-noise acceleration spectral density, m^2/s^3
    measurement_std: float = 0.05
    initial_velocity_std: float = 1.0
    gate: float = GATE_CHI2_99_2DOF
    confirm_hits: int = 3  # M
    confirm_window: int = 4  # N
    max_misses: int = 5

    def violations(self) -> List[str]:
        v = []
        if self.process_noise < 0:
            v.append("tracker.process_noise must be >= 0")
        if self.measurement_std <= 0 or self.initial_velocity_std <= 0:
            v.append("tracker noise standard deviations must be > 0")
        if self.gate <= 0:
            v.append("tracker.gate must be > 0")
        if not 1 <= self.confirm_hits <= self.confirm_window:
            v.append("tracker needs 1 <= confirm_hits <= confirm_window")
        if self.max_misses < 1:
            v.append("tracker.max_misses must be >= 1")
        return v

    @property
    def R(self) -> np.ndarray:
        return self.measurement_std ** 2 * np.eye(2)


@dataclass(eq=False)
class HistoryEntry:
    """One associated observation with the detector outputs it received."""

    frame: int
    t: float
    cluster: object
    dyn_score: Optional[float] = None
    static_conf: Optional[float] = None

    @property
    def centroid(self) -> np.ndarray:
        return self.cluster.centroid


@dataclass
class Track:
    id: int
    state: np.ndarray
    covariance: np.ndarray
    status: str = TENTATIVE
    hits: int = 1
    misses: int = 0
    history: List[HistoryEntry] = field(default_factory=list)
    birth_frame: int = 0
    recent_hits: deque = field(default_factory=deque)
    max_cov_trace: float = 0.0
    # number of history entries already turned into samples
    harvested: int = 0
    last_fired: int = 0
    # (entries already summed, path length so far)
    path_cache: tuple = (1, 0.0)

    @property
    def alive(self) -> bool:
        return self.status != DEAD

    @property
    def position(self) -> np.ndarray:
        return self.state[:2]

    def position_cov_trace(self) -> float:
        return float(self.covariance[0, 0] + self.covariance[1, 1])


@dataclass(frozen=True)
class TrackStats:
    duration: float
    displacement: float
    path_length: float
    avg_speed: float
    max_cov_trace: float


# -- Kalman primitives --------------------------------------------------------


def kf_predict(x, P, F, Q):
    x = F @ x
    P = F @ P @ F.T + Q
    return x, 0.5 * (P + P.T)


def _inv(S: np.ndarray) -> np.ndarray:
    if S.shape == (2, 2):
        a, b, c, d = S.ravel().tolist()
        det = a * d - b * c
        # also false for NaN / inf entries
        if not (det > 1e-14 * max(abs(a * d), abs(b * c), 1e-300) and math.isfinite(det)):
            raise NumericalFailureError(f"singular innovation covariance (det={det})")
        return np.array([[d / det, -b / det], [-c / det, a / det]])
    if not np.all(np.isfinite(S)):
        raise NumericalFailureError("non-finite innovation covariance")
    try:
        if np.linalg.cond(S) > 1e14:
            raise np.linalg.LinAlgError("ill-conditioned")
        return np.linalg.inv(S)
    except np.linalg.LinAlgError as exc:
        raise NumericalFailureError(f"singular innovation covariance: {exc}") from None


_EYE = {}


def _eye(n: int) -> np.ndarray:
    if n not in _EYE:
        _EYE[n] = np.eye(n)
    return _EYE[n]


def kf_update(x, P, z, Hm, R):
    """Kalman correction in Joseph form; returns (x, P, innovation, S)."""
    nu = z - Hm @ x
    PHt = P @ Hm.T
    S = Hm @ PHt + R
    K = PHt @ _inv(S)
    x = x + K @ nu
    IKH = _eye(P.shape[0]) - K @ Hm
    P = IKH @ P @ IKH.T + K @ R @ K.T
    return x, 0.5 * (P + P.T), nu, S


def batch_predict(X: np.ndarray, P: np.ndarray, F: np.ndarray, Q: np.ndarray):
    """:func:`kf_predict` over stacked states (n, d) and covariances (n, d, d)."""
    X = X @ F.T
    P = F @ P @ F.T + Q
    return X, 0.5 * (P + np.swapaxes(P, 1, 2))


def batch_update_position(X: np.ndarray, P: np.ndarray, Z: np.ndarray, R: np.ndarray):
    """:func:`kf_update` (Joseph form) for a direct position measurement,
    vectorized over n tracks."""
    nu = Z - X[:, :2]
    PHt = P[:, :, :2]
    S = P[:, :2, :2] + R
    a, b, c, d = S[:, 0, 0], S[:, 0, 1], S[:, 1, 0], S[:, 1, 1]
    det = a * d - b * c
    ok = (det > 1e-14 * np.maximum(np.maximum(np.abs(a * d), np.abs(b * c)), 1e-300)) & np.isfinite(det)
    if not np.all(ok):
        raise NumericalFailureError("singular innovation covariance")
    S_inv = np.empty_like(S)
    S_inv[:, 0, 0] = d / det
    S_inv[:, 0, 1] = -b / det
    S_inv[:, 1, 0] = -c / det
    S_inv[:, 1, 1] = a / det
    K = PHt @ S_inv
    X = X + np.einsum("nij,nj->ni", K, nu)
    IKH = np.broadcast_to(np.eye(P.shape[1]), P.shape).copy()
    IKH[:, :, :2] -= K
    P = IKH @ P @ np.swapaxes(IKH, 1, 2) + K @ R @ np.swapaxes(K, 1, 2)
    return X, 0.5 * (P + np.swapaxes(P, 1, 2))


def cv_model(dt: float, q: float) -> Tuple[np.ndarray, np.ndarray]:
    """Transition and process noise for a 2D constant-velocity model."""
    F = np.eye(4)
    F[0, 2] = F[1, 3] = dt
    q3, q2, q1 = q * dt ** 3 / 3.0, q * dt ** 2 / 2.0, q * dt
    Q = np.array(
        [
            [q3, 0.0, q2, 0.0],
            [0.0, q3, 0.0, q2],
            [q2, 0.0, q1, 0.0],
            [0.0, q2, 0.0, q1],
        ]
    )
    return F, Q


def kalman_predict(track: Track, dt: float, process_noise: float = 0.5) -> Track:
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    if not track.alive:
        raise InvalidArgumentError(f"track {track.id} is dead")
    F, Q = cv_model(dt, process_noise)
    x, P = kf_predict(track.state, track.covariance, F, Q)
    return replace(track, state=x, covariance=P)


def kalman_update(track: Track, z, R) -> Track:
    if not track.alive:
        raise InvalidArgumentError(f"track {track.id} is dead")
    x, P, _, _ = kf_update(track.state, track.covariance, np.asarray(z, float), H, np.asarray(R, float))
    return replace(track, state=x, covariance=P)


# -- association --------------------------------------------------------------


def mahalanobis_sq(tracks: Sequence[Track], centroids: np.ndarray, R: np.ndarray) -> np.ndarray:
    """Squared Mahalanobis distance between each predicted track position and
    each cluster centroid, shape (n_tracks, n_clusters)."""
    n, m = len(tracks), len(centroids)
    if n == 0 or m == 0:
        return np.zeros((n, m))
    pos = np.array([t.state[:2] for t in tracks])
    S = np.array([t.covariance[:2, :2] for t in tracks]) + R
    a, b, d = S[:, 0, 0, None], S[:, 0, 1, None], S[:, 1, 1, None]
    det = a * d - b * b
    nu = centroids[None, :, :] - pos[:, None, :]
    ex, ey = nu[:, :, 0], nu[:, :, 1]
    # inverse of the symmetric 2x2 innovation covariance, written out
    return (d * ex * ex - 2.0 * b * ex * ey + a * ey * ey) / det


def assignment_cost(d2: np.ndarray, pairs, gate: float) -> float:
    """Total cost of a partial assignment: matched squared distances plus
    ``gate / 2`` for every track or cluster left unmatched."""
    n, m = d2.shape
    matched = math.fsum(d2[i, j] for i, j in pairs)
    return matched + 0.5 * gate * (n + m - 2 * len(pairs))


def solve_assignment(d2: np.ndarray, gate: float) -> List[Tuple[int, int]]:
    """Minimum-cost partial one-to-one assignment; gated-out pairs are never
    used. Returns sorted (track_index, cluster_index) pairs."""
    n, m = d2.shape
    if n == 0 or m == 0:
        return []
    size = n + m
    cost = np.full((size, size), np.inf)
    cost[:n, :m] = np.where(d2 <= gate, d2, np.inf)
    miss = 0.5 * gate
    cost[np.arange(n), m + np.arange(n)] = miss  # track left unmatched
    cost[n + np.arange(m), np.arange(m)] = miss  # cluster left unmatched
    cost[n:, m:] = 0.0
    rows, cols = linear_sum_assignment(cost)
    return sorted((int(r), int(c)) for r, c in zip(rows, cols) if r < n and c < m)


def associate(tracks: Sequence[Track], clusters: Sequence, R: np.ndarray, gate: float = GATE_CHI2_99_2DOF):
    """Returns (assignment {track_index: cluster_index}, unmatched track
    indices, unmatched cluster indices). Tracks are expected in id order."""
    centroids = np.array([c.centroid for c in clusters]).reshape(-1, 2)
    d2 = mahalanobis_sq(tracks, centroids, R)
    pairs = solve_assignment(d2, gate)
    assignment = dict(pairs)
    used = set(assignment.values())
    unmatched_tracks = [i for i in range(len(tracks)) if i not in assignment]
    unmatched_clusters = [j for j in range(len(clusters)) if j not in used]
    return assignment, unmatched_tracks, unmatched_clusters


# -- lifecycle ----------------------------------------------------------------


def track_summary(track: Track) -> TrackStats:
    """Kinematic summary of a trajectory from its associated centroids.

    Path length is accumulated incrementally on the track, so repeated
    summaries of a growing trajectory cost O(new observations).
    """
    hist = track.history
    if len(hist) < 2:
        raise InsufficientDataError(f"track {track.id} has fewer than 2 observations")
    done, path = track.path_cache
    if done > len(hist) or done < 1:
        done, path = 1, 0.0
    prev = hist[done - 1].centroid
    for entry in hist[done:]:
        cur = entry.centroid
        dx, dy = float(cur[0] - prev[0]), float(cur[1] - prev[1])
        path += math.sqrt(dx * dx + dy * dy)
        prev = cur
    track.path_cache = (len(hist), path)
    first, last = hist[0].centroid, hist[-1].centroid
    dx, dy = float(last[0] - first[0]), float(last[1] - first[1])
    displacement = math.sqrt(dx * dx + dy * dy)
    duration = hist[-1].t - hist[0].t
    avg_speed = path / duration if duration > 0 else 0.0
    return TrackStats(duration, min(displacement, path), path, avg_speed, track.max_cov_trace)


@dataclass
class LifecycleEvents:
    spawned: List[int] = field(default_factory=list)
    confirmed: List[int] = field(default_factory=list)
    died: List[int] = field(default_factory=list)
    dropped: List[int] = field(default_factory=list)
    # confirmed tracks that died this frame, handed out exactly once
    finished: List[Track] = field(default_factory=list)


class Tracker:
    """Owns the live track set and the id counter for one run."""

    def __init__(self, config: TrackerConfig = TrackerConfig(), dt: float = 0.1):
        self.config = config
        self.dt = dt
        self.tracks: List[Track] = []
        self._next_id = 1
        self._F, self._Q = cv_model(dt, config.process_noise)
        self._R = config.R

    def _spawn(self, entry: HistoryEntry, frame: int) -> Track:
        cfg = self.config
        P = np.diag([cfg.measurement_std ** 2] * 2 + [cfg.initial_velocity_std ** 2] * 2)
        track = Track(
            id=self._next_id,
            state=np.array([entry.centroid[0], entry.centroid[1], 0.0, 0.0]),
            covariance=P,
            history=[entry],
            birth_frame=frame,
            recent_hits=deque([True], maxlen=cfg.confirm_window),
            max_cov_trace=float(P[0, 0] + P[1, 1]),
            last_fired=frame,
        )
        self._next_id += 1
        if cfg.confirm_hits <= 1:
            track.status = CONFIRMED
        return track

    def predict(self, dt: Optional[float] = None) -> None:
        if dt is not None and dt != self.dt:
            self.dt = dt
            self._F, self._Q = cv_model(dt, self.config.process_noise)
        if not self.tracks:
            return
        X = np.array([t.state for t in self.tracks])
        P = np.array([t.covariance for t in self.tracks])
        X, P = batch_predict(X, P, self._F, self._Q)
        for i, t in enumerate(self.tracks):
            t.state, t.covariance = X[i], P[i]

    def lifecycle(self, assignment: Dict[int, int], entries: Sequence[HistoryEntry], frame: int,
                  can_spawn: Optional[Sequence[bool]] = None) -> LifecycleEvents:
        """Apply one frame's associations: correct matched tracks, count misses,
        confirm, kill, and spawn tentative tracks from unmatched entries.

        ``can_spawn`` restricts which unmatched entries may start a track.
        """
        cfg = self.config
        ev = LifecycleEvents()
        if assignment:
            idx = sorted(assignment)
            X = np.array([self.tracks[i].state for i in idx])
            P = np.array([self.tracks[i].covariance for i in idx])
            Z = np.array([entries[assignment[i]].centroid for i in idx])
            X, P = batch_update_position(X, P, Z, self._R)
            traces = (P[:, 0, 0] + P[:, 1, 1]).tolist()
            for k, i in enumerate(idx):
                track = self.tracks[i]
                track.state, track.covariance = X[k], P[k]
                track.max_cov_trace = max(track.max_cov_trace, traces[k])
        survivors = []
        for i, track in enumerate(self.tracks):
            j = assignment.get(i)
            if j is not None:
                track.history.append(entries[j])
                track.hits += 1
                track.misses = 0
            else:
                track.misses += 1
            if track.status == TENTATIVE:
                track.recent_hits.append(j is not None)
                if sum(track.recent_hits) >= cfg.confirm_hits:
                    track.status = CONFIRMED
                    ev.confirmed.append(track.id)
                elif frame - track.birth_frame + 1 >= cfg.confirm_window:
                    track.status = DEAD
                    ev.dropped.append(track.id)
                    continue
            elif track.misses >= cfg.max_misses:
                track.status = DEAD
                ev.died.append(track.id)
                ev.finished.append(track)
                continue
            survivors.append(track)
        used = set(assignment.values())
        for j, entry in enumerate(entries):
            if j not in used and (can_spawn is None or can_spawn[j]):
                track = self._spawn(entry, frame)
                survivors.append(track)
                ev.spawned.append(track.id)
                if track.status == CONFIRMED:
                    ev.confirmed.append(track.id)
        self.tracks = survivors
        return ev

    def step(self, entries: Sequence[HistoryEntry], frame: int, dt: Optional[float] = None,
             can_spawn: Optional[Sequence[bool]] = None) -> LifecycleEvents:
        self.predict(dt)
        assignment, _, _ = associate(self.tracks, [e.cluster for e in entries], self._R, self.config.gate)
        return self.lifecycle(assignment, entries, frame, can_spawn)
