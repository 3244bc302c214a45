"""Seeded planar world emitting pre-segmented feature clusters.

Humans walk between random waypoints at a constant speed per leg. Clutter is
either static or wanders slowly around an anchor. Every cluster carries its
hidden class, which only the static oracle and the metrics may read.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from . import _rng
from .detectors import LabeledSample
from .exceptions import ConfigValidationError, EndOfStream, InvalidArgumentError

HUMAN = "human"
CLUTTER = "clutter"
CLUTTER_WANDER_RADIUS = 0.3


@dataclass(eq=False)
class FeatureCluster:
    centroid: np.ndarray
    features: np.ndarray
    truth: str
    agent_id: Optional[int]
    frame: int

    def to_record(self) -> dict:
        return {
            "centroid": self.centroid.tolist(),
            "features": self.features.tolist(),
            "truth": self.truth,
            "agent_id": self.agent_id,
            "frame": self.frame,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FeatureCluster":
        return cls(
            np.array(rec["centroid"], dtype=float),
            np.array(rec["features"], dtype=float),
            rec["truth"],
            rec["agent_id"],
            int(rec["frame"]),
        )


@dataclass(frozen=True)
class WorldConfig:
    n_humans: int = 10
    n_clutter: int = 10
    arena: Tuple[float, float] = (20.0, 20.0)
    human_speed_range: Tuple[float, float] = (0.5, 1.5)
    clutter_speed_range: Tuple[float, float] = (0.0, 0.05)
    feature_dim: int = 16
    class_feature_separation: float = 4.0
    feature_noise: float = 1.0
    centroid_noise: float = 0.01
    miss_rate: float = 0.05
    false_positive_rate: float = 0.05
    frames: int = 20000
    dt: float = 0.1
    seed: int = 0

    def violations(self) -> List[str]:
        v = []
        if self.n_humans < 0 or self.n_clutter < 0:
            v.append("world.n_humans and world.n_clutter must be >= 0")
        if len(self.arena) != 2 or min(self.arena) <= 0:
            v.append("world.arena must be two positive lengths")
        for name in ("human_speed_range", "clutter_speed_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                v.append(f"world.{name} must satisfy 0 <= min <= max")
        if self.feature_dim < 2:
            v.append(f"world.feature_dim={self.feature_dim} must be >= 2")
        if self.feature_noise < 0 or self.centroid_noise < 0:
            v.append("world noise levels must be >= 0")
        if self.class_feature_separation < 0:
            v.append("world.class_feature_separation must be >= 0")
        for name in ("miss_rate", "false_positive_rate"):
            r = getattr(self, name)
            if not 0.0 <= r <= 1.0:
                v.append(f"world.{name}={r} must be in [0, 1]")
        if self.frames < 1:
            v.append(f"world.frames={self.frames} must be >= 1")
        if not self.dt > 0:
            v.append(f"world.dt={self.dt} must be > 0")
        return v

    def validate(self) -> "WorldConfig":
        v = self.violations()
        if v:
            raise ConfigValidationError(v)
        return self


def class_means(cfg: WorldConfig) -> Tuple[np.ndarray, np.ndarray]:
    """(human_mean, clutter_mean), separated by ``class_feature_separation``
    around a random common offset."""
    rng = _rng.generator(cfg.seed, _rng.FEATURE_MEANS)
    center = 0.5 * rng.standard_normal(cfg.feature_dim)
    direction = rng.standard_normal(cfg.feature_dim)
    direction /= math.sqrt(float(direction @ direction))
    half = 0.5 * cfg.class_feature_separation * direction
    return center + half, center - half


class World:
    """Mutable world state; stepped by :func:`tick`."""

    def __init__(self, cfg: WorldConfig):
        self.cfg = cfg.validate()
        kin_seq, obs_seq = _rng.substream(cfg.seed, _rng.WORLD).spawn(2)
        self._kin = np.random.Generator(np.random.PCG64(kin_seq))
        self._obs = np.random.Generator(np.random.PCG64(obs_seq))
        self.frame = 0
        self.human_mean, self.clutter_mean = class_means(cfg)

        n = cfg.n_humans + cfg.n_clutter
        w, h = cfg.arena
        self.is_human = np.array([True] * cfg.n_humans + [False] * cfg.n_clutter)
        self.positions = self._kin.random((n, 2)) * (w, h)
        self.anchors = self.positions.copy()
        # static clutter never moves; the rest draw legs
        self.mobile = self.is_human.copy()
        if cfg.n_clutter:
            self.mobile[cfg.n_humans:] = self._kin.random(cfg.n_clutter) < 0.5
        self.waypoints = self.positions.copy()
        self.speeds = np.zeros(n)
        self.odometer = np.zeros(n)
        for i in np.flatnonzero(self.mobile):
            self._new_leg(i)

    @property
    def n_agents(self) -> int:
        return self.positions.shape[0]

    def _new_leg(self, i: int) -> None:
        cfg = self.cfg
        if self.is_human[i]:
            self.waypoints[i] = self._kin.random(2) * cfg.arena
            lo, hi = cfg.human_speed_range
        else:
            # uniform point in a disc around the anchor, kept inside the arena
            r = CLUTTER_WANDER_RADIUS * math.sqrt(self._kin.random())
            d = self._kin.standard_normal(2)
            d *= r / max(math.sqrt(float(d @ d)), 1e-12)
            self.waypoints[i] = np.clip(self.anchors[i] + d, 0.0, cfg.arena)
            lo, hi = cfg.clutter_speed_range
        self.speeds[i] = lo + (hi - lo) * self._kin.random()

    def _advance(self) -> None:
        dt = self.cfg.dt
        idx = np.flatnonzero(self.mobile)
        if idx.size == 0:
            return
        d = self.waypoints[idx] - self.positions[idx]
        dist = np.sqrt(d[:, 0] * d[:, 0] + d[:, 1] * d[:, 1])
        reach = self.speeds[idx] * dt
        inside = reach < dist
        mid = idx[inside]
        self.positions[mid] += d[inside] * (reach[inside] / dist[inside])[:, None]
        self.odometer[mid] += reach[inside]
        for i in idx[~inside]:
            self._finish_leg(int(i), dt)

    def _finish_leg(self, i: int, remaining: float) -> None:
        # a leg ends mid-step; the rest of the step follows the next leg
        for _ in range(16):
            d = self.waypoints[i] - self.positions[i]
            dist = math.sqrt(float(d @ d))
            reach = self.speeds[i] * remaining
            if reach < dist:
                self.positions[i] += d * (reach / dist)
                self.odometer[i] += reach
                return
            self.positions[i] = self.waypoints[i]
            self.odometer[i] += dist
            if self.speeds[i] > 0:
                remaining -= dist / self.speeds[i]
            self._new_leg(i)
            if remaining <= 0 or self.speeds[i] == 0:
                return

    def tick(self) -> List[FeatureCluster]:
        if self.frame >= self.cfg.frames:
            raise EndOfStream(f"horizon of {self.cfg.frames} frames reached")
        self.frame += 1
        self._advance()
        return self._observe()

    def _observe(self) -> List[FeatureCluster]:
        cfg = self.cfg
        n, f = self.n_agents, cfg.feature_dim
        # fixed draw layout per tick, independent of which clusters survive
        miss = self._obs.random(n)
        pos_noise = self._obs.standard_normal((n, 2))
        feat_noise = self._obs.standard_normal((n, f))
        fp_draw = self._obs.random()
        fp_pos = self._obs.random(2)
        fp_noise = self._obs.standard_normal(f)

        centroids = self.positions + cfg.centroid_noise * pos_noise
        features = np.where(self.is_human[:, None], self.human_mean, self.clutter_mean) + cfg.feature_noise * feat_noise
        out = [
            FeatureCluster(centroids[i], features[i], HUMAN if self.is_human[i] else CLUTTER, i, self.frame)
            for i in np.flatnonzero(miss >= cfg.miss_rate).tolist()
        ]
        if fp_draw < cfg.false_positive_rate:
            out.append(
                FeatureCluster(
                    fp_pos * cfg.arena,
                    self.clutter_mean + cfg.feature_noise * fp_noise,
                    CLUTTER,
                    None,
                    self.frame,
                )
            )
        return out


def init_world(cfg: WorldConfig) -> World:
    return World(cfg)


def tick(world) -> List[FeatureCluster]:
    """Advance one frame and return its clusters. Frames are numbered from 1."""
    return world.tick()


def stream(world) -> Iterator[List[FeatureCluster]]:
    while True:
        try:
            yield world.tick()
        except EndOfStream:
            return


def eval_set(cfg: WorldConfig, n: int = 500) -> List[LabeledSample]:
    """Balanced held-out samples from the class feature distributions.

    Drawn from the evaluation substream, so they never coincide with the
    world stream.
    """
    if n < 2:
        raise InvalidArgumentError(f"evaluation set needs n >= 2, got {n}")
    rng = _rng.generator(cfg.seed, _rng.EVALUATION)
    human_mean, clutter_mean = class_means(cfg)
    labels = np.array([1] * (n // 2) + [0] * (n - n // 2))
    labels = labels[rng.permutation(n)]
    noise = rng.standard_normal((n, cfg.feature_dim))
    means = np.where(labels[:, None] == 1, human_mean, clutter_mean)
    X = means + cfg.feature_noise * noise
    return [LabeledSample(X[i], int(labels[i]), 1.0, "seed", 0) for i in range(n)]


def dump_stream(world: World, path) -> int:
    """Write every remaining frame of ``world`` as one JSON line; returns the
    number of frames written."""
    count = 0
    with open(path, "w") as fh:
        fh.write(json.dumps({"world_config": asdict(world.cfg)}) + "\n")
        for clusters in stream(world):
            fh.write(json.dumps({"frame": world.frame, "clusters": [c.to_record() for c in clusters]}) + "\n")
            count += 1
    return count


class ReplayWorld:
    """Reads a dumped stream and serves it through the same ``tick`` API."""

    def __init__(self, path):
        with open(path) as fh:
            header = json.loads(fh.readline())
            self.cfg = WorldConfig(**_tuples(header["world_config"]))
            self._frames = [json.loads(line) for line in fh if line.strip()]
        self.frame = 0

    def tick(self) -> List[FeatureCluster]:
        if self.frame >= len(self._frames):
            raise EndOfStream("replayed stream exhausted")
        rec = self._frames[self.frame]
        self.frame = int(rec["frame"])
        return [FeatureCluster.from_record(c) for c in rec["clusters"]]


def _tuples(d: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
