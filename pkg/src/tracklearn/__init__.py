"""Self-supervised online learning of a detector from tracked clusters."""

from .detectors import (
    DynamicModel,
    LabeledSample,
    OnlineLogisticClassifier,
    StaticDetectorConfig,
    StaticOracleDetector,
    dyn_predict,
    dyn_update,
    loss_and_gradient,
    static_detect,
)
from .experts import ExpertConfig, n_expert, p_expert
from .fusion import DetectionConfidence, DetectionSet, fuse, odds
from .metrics import (
    HindsightLogisticRegression,
    MetricsLog,
    converged,
    hindsight_optimum,
    regret,
    stability,
    stability_rate,
)
from .pipeline import SelfSupervisedDetector, generate_labels, seed_supervision
from .simulator import FeatureCluster, WorldConfig, eval_set, init_world, tick
from .tracker import Track, Tracker, TrackerConfig, associate, kalman_predict, kalman_update, track_summary

__version__ = "0.1.0"
