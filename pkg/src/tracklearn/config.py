"""Run configuration: YAML file, command-line overrides, validation.

Precedence is flags > file > defaults.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .exceptions import ConfigValidationError
from .experts import ExpertConfig
from .pipeline import MODES, FRAMEWORK_B
from .simulator import WorldConfig
from .tracker import TrackerConfig

OUTPUT_ROOT_ENV = "TRACKLEARN_OUTPUT_ROOT"


@dataclass(frozen=True)
class StaticSection:
    accuracy: float = 0.9
    confidence_concentration: float = 2.0
    # derived from the master seed when left unset
    seed: Optional[int] = None


@dataclass(frozen=True)
class LearnerSection:
    lr0: float = 0.5
    fusion_window: int = 10
    ambiguity_margin: float = 0.1
    # human-provided seed samples (framework_a only)
    seed_positives: int = 1
    seed_negatives: int = 0


@dataclass(frozen=True)
class MetricsSection:
    eval_every: int = 50
    eval_size: int = 500
    window: int = 40  # evaluations
    tau: float = 0.02
    delta: float = 0.02


@dataclass(frozen=True)
class RunConfig:
    mode: str = FRAMEWORK_B
    seed: int = 0
    world: WorldConfig = field(default_factory=WorldConfig)
    experts: ExpertConfig = field(default_factory=ExpertConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    static_detector: StaticSection = field(default_factory=StaticSection)
    learner: LearnerSection = field(default_factory=LearnerSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    output_dir: Optional[str] = None
    snapshot_every: int = 1000
    frame_events: bool = True

    def violations(self) -> List[str]:
        v = []
        if self.mode not in MODES:
            v.append(f"mode={self.mode!r} must be one of {', '.join(MODES)}")
        v += self.world.violations()
        v += self.experts.violations()
        v += self.tracker.violations()
        s = self.static_detector
        if not 0.5 < s.accuracy <= 1.0:
            v.append(f"static_detector.accuracy={s.accuracy} must be in (0.5, 1]")
        if not s.confidence_concentration > 0:
            v.append("static_detector.confidence_concentration must be positive")
        ln = self.learner
        if not ln.lr0 > 0:
            v.append("learner.lr0 must be positive")
        if ln.fusion_window < 1:
            v.append("learner.fusion_window must be >= 1")
        if ln.seed_positives < 0 or ln.seed_negatives < 0:
            v.append("learner seed counts must be >= 0")
        if self.mode == "framework_a" and ln.seed_positives + ln.seed_negatives < 1:
            v.append("framework_a needs at least one seed sample")
        m = self.metrics
        if m.eval_every < 1:
            v.append("metrics.eval_every must be >= 1")
        if m.eval_size < 2:
            v.append("metrics.eval_size must be >= 2")
        if m.window < 1:
            v.append("metrics.window must be >= 1")
        if m.tau < 0 or m.delta < 0:
            v.append("metrics.tau and metrics.delta must be >= 0")
        if self.snapshot_every < 1:
            v.append("snapshot_every must be >= 1")
        if self.output_dir is not None:
            v += _writable(self.output_dir)
        return v

    def validate(self) -> "RunConfig":
        v = self.violations()
        if v:
            raise ConfigValidationError(v)
        return self

    def to_dict(self) -> Dict[str, Any]:
        return _plain(dataclasses.asdict(self))


def _writable(path: str) -> List[str]:
    p = Path(path)
    while not p.exists():
        if p.parent == p:
            break
        p = p.parent
    if not os.access(p, os.W_OK):
        return [f"output_dir={path!r} is not writable"]
    return []


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


_SECTIONS = {
    "world": WorldConfig,
    "experts": ExpertConfig,
    "tracker": TrackerConfig,
    "static_detector": StaticSection,
    "learner": LearnerSection,
    "metrics": MetricsSection,
}


def _build(cls, data: Dict[str, Any], where: str, errors: List[str]):
    names = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in names:
            errors.append(f"unknown key {where}.{key}")
            continue
        default = names[key].default
        if isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        errors.append(f"{where}: {exc}")
        return cls()


def from_dict(data: Optional[Dict[str, Any]]) -> RunConfig:
    """Build and validate a config; every problem is reported at once."""
    data = dict(data or {})
    errors: List[str] = []
    kwargs: Dict[str, Any] = {}
    for key, value in data.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                errors.append(f"section {key} must be a mapping")
                continue
            kwargs[key] = _build(_SECTIONS[key], value, key, errors)
        elif key in {f.name for f in fields(RunConfig)}:
            kwargs[key] = value
        else:
            errors.append(f"unknown key {key}")
    if errors:
        raise ConfigValidationError(errors)
    cfg = RunConfig(**kwargs)
    return resolve(cfg).validate()


def resolve(cfg: RunConfig) -> RunConfig:
    """Propagate shared settings: the master seed drives the world, and the
    learner's ambiguity margin is the one the label generator uses."""
    return replace(
        cfg,
        world=replace(cfg.world, seed=int(cfg.seed)),
        experts=replace(cfg.experts, ambiguity_margin=cfg.learner.ambiguity_margin),
    )


def load(path) -> RunConfig:
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigValidationError([f"{path}: {exc}"]) from None
    if data is not None and not isinstance(data, dict):
        raise ConfigValidationError([f"{path}: top level must be a mapping"])
    return from_dict(data)


def override(cfg: RunConfig, seed=None, mode=None, output_dir=None, frames=None) -> RunConfig:
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    if mode is not None:
        cfg = replace(cfg, mode=mode)
    if output_dir is not None:
        cfg = replace(cfg, output_dir=str(output_dir))
    if frames is not None:
        cfg = replace(cfg, world=replace(cfg.world, frames=int(frames)))
    return resolve(cfg).validate()


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
