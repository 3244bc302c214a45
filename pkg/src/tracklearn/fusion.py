"""Odds-based fusion of independent binary detector confidences."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .exceptions import EmptyInputError, InvalidProbabilityError

EPS = 1e-6


@dataclass(frozen=True)
class DetectionConfidence:
    prob: float
    detector_id: int = 0
    detection_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "prob", clamp(self.prob))


@dataclass(frozen=True)
class DetectionSet:
    detections: tuple
    o: int
    k: int

    @classmethod
    def from_probs(cls, probs: Iterable[float], detector_id: int = 0) -> "DetectionSet":
        dets = tuple(
            DetectionConfidence(p, detector_id, i) for i, p in enumerate(probs)
        )
        return cls.from_detections(dets)

    @classmethod
    def from_detections(cls, detections: Sequence[DetectionConfidence]) -> "DetectionSet":
        detections = tuple(detections)
        if not detections:
            raise EmptyInputError("detection set is empty")
        o = max(d.detector_id for d in detections) + 1
        counts: dict = {}
        for d in detections:
            counts[d.detector_id] = counts.get(d.detector_id, 0) + 1
        return cls(detections, o, max(counts.values()))

    def probs(self) -> list:
        return [d.prob for d in self.detections]


def clamp(p: float) -> float:
    """Validate ``p`` and clamp it into [EPS, 1 - EPS]."""
    p = float(p)
    if not 0.0 <= p <= 1.0:  # also rejects NaN
        raise InvalidProbabilityError(f"probability {p!r} outside [0, 1]")
    return min(max(p, EPS), 1.0 - EPS)


def odds(p: float) -> float:
    p = clamp(p)
    return p / (1.0 - p)


def log_odds(p: float) -> float:
    p = clamp(p)
    return math.log(p) - math.log1p(-p)


def fuse(ds) -> float:
    """Fused probability of the positive class given independent detections.

    Accepts a :class:`DetectionSet` or any iterable of probabilities. The
    log-odds are summed with ``math.fsum`` (correctly rounded), so the result
    does not depend on the order of the detections.
    """
    probs = ds.probs() if isinstance(ds, DetectionSet) else list(ds)
    if not probs:
        raise EmptyInputError("cannot fuse an empty detection set")
    total = math.fsum(log_odds(p) for p in probs)
    # logistic of the summed log-odds, written to avoid overflow in exp
    if total >= 0:
        return 1.0 / (1.0 + math.exp(-total))
    e = math.exp(total)
    return e / (1.0 + e)
