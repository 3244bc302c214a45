"""The two self-supervised online learning loops.

Framework A scores every cluster with the dynamic detector, tracks them all,
and lets the kinematic experts correct the detector from trajectory evidence.
It needs at least one human-provided seed sample before the first frame.

Framework B scores clusters with both the pretrained static detector and the
dynamic one. Detections from either feed the tracker, and the static
confidences along each trajectory are fused into labels for the dynamic
detector. No external label enters after frame 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .detectors import (
    DynamicModel,
    LabeledSample,
    StaticOracleDetector,
    dyn_predict_batch,
    dyn_update,
    online_step,
)
from .experts import ExpertConfig, n_expert, p_expert
from .exceptions import EmptyInputError, InvalidPhaseError
from .fusion import fuse
from .metrics import L2
from .tracker import CONFIRMED, HistoryEntry, Track, Tracker, TrackerConfig, track_summary

FRAMEWORK_A = "framework_a"
FRAMEWORK_B = "framework_b"
MODES = (FRAMEWORK_A, FRAMEWORK_B)
ALLOWED_PROVENANCE = {FRAMEWORK_A: {"seed", "p_expert", "n_expert"}, FRAMEWORK_B: {"fusion"}}


@dataclass
class FrameOutput:
    frame: int
    predictions: List[float]
    static_outputs: Optional[List[float]]
    new_samples: List[LabeledSample]
    track_events: Dict[str, List[int]]

    def to_record(self) -> dict:
        return {
            "type": "frame",
            "frame": self.frame,
            "predictions": self.predictions,
            "static_outputs": self.static_outputs,
            "new_samples": [
                {"y": s.y, "weight": s.weight, "provenance": s.provenance, "frame": s.frame}
                for s in self.new_samples
            ],
            "track_events": self.track_events,
        }


@dataclass
class PipelineState:
    mode: str
    model: DynamicModel
    tracker: Tracker
    experts: ExpertConfig = field(default_factory=ExpertConfig)
    static_detector: Optional[StaticOracleDetector] = None
    fusion_window: int = 10
    frame: int = 0
    sample_log: List[LabeledSample] = field(default_factory=list)
    # loss of each logged sample under the parameters it was consumed with
    sample_losses: List[float] = field(default_factory=list)
    cum_loss: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode == FRAMEWORK_B and self.static_detector is None:
            raise ValueError("framework_b needs a static detector")


def new_state(
    mode: str,
    n_features: int,
    lr0: float = 0.5,
    dt: float = 0.1,
    tracker: TrackerConfig = TrackerConfig(),
    experts: ExpertConfig = ExpertConfig(),
    static_detector: Optional[StaticOracleDetector] = None,
    fusion_window: int = 10,
) -> PipelineState:
    return PipelineState(
        mode=mode,
        model=DynamicModel.zeros(n_features, lr0),
        tracker=Tracker(tracker, dt),
        experts=experts,
        static_detector=static_detector,
        fusion_window=fusion_window,
    )


def learn(state: PipelineState, sample: LabeledSample) -> None:
    """Record the pre-update loss of ``sample`` and take one online step."""
    if sample.provenance not in ALLOWED_PROVENANCE[state.mode]:
        raise ValueError(f"{sample.provenance!r} samples are not accepted in {state.mode}")
    m = state.model
    loss, state.model = online_step(m, sample)
    loss += 0.5 * L2 * (float(m.weights @ m.weights) + m.bias * m.bias)
    state.sample_log.append(sample)
    state.sample_losses.append(loss)
    state.cum_loss += loss


def seed_supervision(state: PipelineState, samples: Sequence[LabeledSample]) -> PipelineState:
    """Apply human-provided samples before the first frame (Framework A only)."""
    if state.mode != FRAMEWORK_A:
        raise InvalidPhaseError("seed supervision exists only in framework_a")
    if state.frame != 0:
        raise InvalidPhaseError(f"seed supervision after frame 0 (at frame {state.frame})")
    if len(samples) == 0:
        raise EmptyInputError("no seed samples given")
    for s in samples:
        learn(state, LabeledSample(s.x, s.y, 1.0, "seed", 0, s.cluster))
    return state


def generate_labels(history: Sequence[HistoryEntry], static_outputs=None, window: int = 10,
                    ambiguity_margin: float = 0.1, start: int = 0) -> List[LabeledSample]:
    """Fuse the last ``window`` static confidences of a trajectory and label
    its clusters with the result.

    ``static_outputs`` defaults to the confidences stored in ``history``.
    Clusters before ``start`` are never emitted (already harvested).
    """
    if static_outputs is None:
        static_outputs = _StaticView(history)
    # newest first, stop once the window is full
    recent = []
    for i in range(len(history) - 1, -1, -1):
        if static_outputs[i] is not None:
            recent.append((i, history[i], static_outputs[i]))
            if len(recent) == window:
                break
    if not recent:
        raise EmptyInputError("trajectory has no static detector outputs")
    recent.reverse()
    p = fuse([c for _, _, c in recent])
    if abs(p - 0.5) <= ambiguity_margin:
        return []
    label = 1 if p > 0.5 else 0
    weight = min(abs(2.0 * p - 1.0), 1.0)
    return [
        LabeledSample(h.cluster.features, label, weight, "fusion", h.frame, h.cluster)
        for i, h, _ in recent
        if i >= start
    ]


class _StaticView:
    """Lazy view of the static confidences stored in a history."""

    def __init__(self, history):
        self._history = history

    def __getitem__(self, i):
        return self._history[i].static_conf


def _due(track: Track, frame: int, every: int) -> bool:
    return track.status == CONFIRMED and frame - track.last_fired >= every


def _harvest_a(state: PipelineState, track: Track, frame: int) -> List[LabeledSample]:
    track.last_fired = frame
    if len(track.history) < 2 or track.harvested >= len(track.history):
        return []
    stats = track_summary(track)
    out = p_expert(stats, track.history, state.experts, track.harvested)
    out += n_expert(stats, track.history, state.experts, track.harvested)
    track.harvested = len(track.history)
    return out


def _harvest_b(state: PipelineState, track: Track, frame: int) -> List[LabeledSample]:
    track.last_fired = frame
    if track.harvested >= len(track.history):
        return []
    out = generate_labels(
        track.history, None, state.fusion_window, state.experts.ambiguity_margin, track.harvested
    )
    track.harvested = len(track.history)
    return out


def _events(ev) -> Dict[str, List[int]]:
    return {"spawned": ev.spawned, "confirmed": ev.confirmed, "died": ev.died, "dropped": ev.dropped}


def _next_frame(state: PipelineState, frame: Optional[int]) -> int:
    frame = state.frame + 1 if frame is None else int(frame)
    if frame <= state.frame:
        raise ValueError(f"frame {frame} does not advance past {state.frame}")
    return frame


def _features(clusters) -> np.ndarray:
    if not clusters:
        return np.empty((0, 0))
    return np.array([c.features for c in clusters], dtype=float)


def step_framework_a(state: PipelineState, clusters: Sequence, dt: float, frame: Optional[int] = None):
    if state.mode != FRAMEWORK_A:
        raise InvalidPhaseError("step_framework_a called on a framework_b pipeline")
    frame = _next_frame(state, frame)
    preds = dyn_predict_batch(state.model, _features(clusters)).tolist() if clusters else []
    t = frame * dt
    entries = [HistoryEntry(frame, t, c, p, None) for c, p in zip(clusters, preds)]
    ev = state.tracker.step(entries, frame, dt)

    new = []
    for track in ev.finished:
        new += _harvest_a(state, track, frame)
    every = state.experts.fire_every
    for track in state.tracker.tracks:
        if _due(track, frame, every):
            new += _harvest_a(state, track, frame)
    for s in new:
        learn(state, s)
    state.frame = frame
    return state, FrameOutput(frame, preds, None, new, _events(ev))


def step_framework_b(state: PipelineState, clusters: Sequence, dt: float, frame: Optional[int] = None):
    if state.mode != FRAMEWORK_B:
        raise InvalidPhaseError("step_framework_b called on a framework_a pipeline")
    frame = _next_frame(state, frame)
    preds = dyn_predict_batch(state.model, _features(clusters)).tolist() if clusters else []
    static = state.static_detector.detect(clusters).tolist()
    t = frame * dt
    entries = [HistoryEntry(frame, t, c, p, s) for c, p, s in zip(clusters, preds, static)]
    # only detections start trajectories; live ones keep following their target
    detected = [s > 0.5 or p > 0.5 for p, s in zip(preds, static)]
    ev = state.tracker.step(entries, frame, dt, detected)

    confirmed = set(ev.confirmed)
    new = []
    for track in ev.finished:
        new += _harvest_b(state, track, frame)
    every = state.experts.fire_every
    for track in state.tracker.tracks:
        if track.id in confirmed or _due(track, frame, every):
            new += _harvest_b(state, track, frame)
    for s in new:
        learn(state, s)
    state.frame = frame
    return state, FrameOutput(frame, preds, static, new, _events(ev))


def step(state: PipelineState, clusters: Sequence, dt: float, frame: Optional[int] = None):
    if state.mode == FRAMEWORK_A:
        return step_framework_a(state, clusters, dt, frame)
    return step_framework_b(state, clusters, dt, frame)


def replay_samples(samples: Sequence[LabeledSample], n_features: int, lr0: float = 0.5) -> DynamicModel:
    """Re-run the online updates of a recorded sample log on a fresh model."""
    m = DynamicModel.zeros(n_features, lr0)
    for s in samples:
        m = dyn_update(m, s)
    return m


class SelfSupervisedDetector(BaseEstimator):
    """Estimator facade over a pipeline run.

    ``partial_fit`` consumes one frame of clusters; ``fit`` consumes a whole
    stream (any iterable of frames). ``predict_proba`` scores feature rows
    with the dynamic detector learned so far.
    """

    def __init__(self, mode=FRAMEWORK_B, lr0=0.5, dt=0.1, fusion_window=10,
                 tracker=None, experts=None, static_detector=None):
        self.mode = mode
        self.lr0 = lr0
        self.dt = dt
        self.fusion_window = fusion_window
        self.tracker = tracker
        self.experts = experts
        self.static_detector = static_detector

    def _init_state(self, n_features):
        self.state_ = new_state(
            self.mode,
            n_features,
            self.lr0,
            self.dt,
            self.tracker or TrackerConfig(),
            self.experts or ExpertConfig(),
            self.static_detector,
            self.fusion_window,
        )
        self.n_features_in_ = n_features
        self.classes_ = np.array([0, 1])

    def seed(self, samples, n_features=None):
        if not hasattr(self, "state_"):
            self._init_state(n_features or len(samples[0].x))
        seed_supervision(self.state_, samples)
        return self

    def partial_fit(self, clusters, n_features=None):
        if not hasattr(self, "state_"):
            if n_features is None:
                if not clusters:
                    raise ValueError("n_features is required when the first frame is empty")
                n_features = len(clusters[0].features)
            self._init_state(n_features)
        _, out = step(self.state_, clusters, self.dt)
        self.last_output_ = out
        return self

    def fit(self, frames, n_features=None):
        for clusters in frames:
            self.partial_fit(clusters, n_features)
        return self

    @property
    def model_(self) -> DynamicModel:
        check_is_fitted(self, "state_")
        return self.state_.model

    def predict_proba(self, X):
        p = dyn_predict_batch(self.model_, check_array(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)
