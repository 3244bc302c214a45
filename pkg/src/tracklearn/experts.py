"""Kinematic P-expert and N-expert that turn trajectories into corrections."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .detectors import LabeledSample
from .exceptions import ConfigValidationError
from .tracker import TrackStats


@dataclass(frozen=True)
class ExpertConfig:
    min_duration: float = 2.0
    speed_range: Tuple[float, float] = (0.3, 3.0)
    min_displacement: float = 1.0
    max_cov_trace: float = 2.0
    static_displacement: float = 0.2
    ambiguity_margin: float = 0.1
    fire_every: int = 20  # frames between firings on a long-lived track

    def violations(self) -> List[str]:
        v = []
        lo, hi = self.speed_range
        if not 0 < lo < hi:
            v.append(f"experts.speed_range={self.speed_range} must satisfy 0 < min < max")
        for name in ("min_duration", "min_displacement", "max_cov_trace", "static_displacement", "ambiguity_margin"):
            if not getattr(self, name) > 0:
                v.append(f"experts.{name} must be positive")
        if self.ambiguity_margin >= 0.5:
            v.append("experts.ambiguity_margin must be < 0.5")
        if self.static_displacement >= self.min_displacement:
            v.append("experts.static_displacement must be below experts.min_displacement")
        if self.fire_every < 1:
            v.append("experts.fire_every must be >= 1")
        return v

    def validate(self) -> "ExpertConfig":
        v = self.violations()
        if v:
            raise ConfigValidationError(v)
        return self


def human_plausible(stats: TrackStats, cfg: ExpertConfig) -> bool:
    lo, hi = cfg.speed_range
    return (
        stats.duration >= cfg.min_duration
        and lo <= stats.avg_speed <= hi
        and stats.displacement >= cfg.min_displacement
        and stats.max_cov_trace <= cfg.max_cov_trace
    )


def human_implausible(stats: TrackStats, cfg: ExpertConfig) -> bool:
    lo, hi = cfg.speed_range
    parked = stats.displacement <= cfg.static_displacement and stats.duration >= cfg.min_duration
    return parked or not lo <= stats.avg_speed <= hi


def _emit(history: Sequence, start: int, label: int, provenance: str, wrong) -> List[LabeledSample]:
    out = []
    for entry in history[start:]:
        if entry.dyn_score is not None and wrong(entry.dyn_score):
            out.append(LabeledSample(entry.cluster.features, label, 1.0, provenance, entry.frame, entry.cluster))
    return out


def p_expert(stats: TrackStats, history: Sequence, cfg: ExpertConfig = ExpertConfig(), start: int = 0) -> List[LabeledSample]:
    """Positives for clusters of a human-like trajectory that the dynamic
    detector missed. Only ``history[start:]`` is considered for emission."""
    if not human_plausible(stats, cfg):
        return []
    return _emit(history, start, 1, "p_expert", lambda p: p < 0.5)


def n_expert(stats: TrackStats, history: Sequence, cfg: ExpertConfig = ExpertConfig(), start: int = 0) -> List[LabeledSample]:
    """Negatives for clusters of a static or implausibly moving trajectory
    that the dynamic detector accepted."""
    if not human_implausible(stats, cfg):
        return []
    return _emit(history, start, 0, "n_expert", lambda p: p > 0.5)
