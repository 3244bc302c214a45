"""Static teacher detector and the online logistic dynamic detector."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import ConfigValidationError, NumericalFailureError, ShapeError
from .fusion import EPS, DetectionConfidence

PROVENANCES = ("seed", "p_expert", "n_expert", "fusion")

# keeps dyn_predict strictly inside (0, 1) in floating point
P_MIN = 1e-300
P_MAX = 1.0 - 2.0 ** -53


@dataclass
class DynamicModel:
    weights: np.ndarray
    bias: float = 0.0
    updates: int = 0
    lr0: float = 0.5

    @classmethod
    def zeros(cls, n_features: int, lr0: float = 0.5) -> "DynamicModel":
        return cls(np.zeros(int(n_features)), 0.0, 0, float(lr0))

    @property
    def n_features(self) -> int:
        return self.weights.shape[0]

    def params(self) -> np.ndarray:
        """Weights and bias stacked as one (f+1)-vector."""
        return np.append(self.weights, self.bias)

    def copy(self) -> "DynamicModel":
        return replace(self, weights=self.weights.copy())


@dataclass
class LabeledSample:
    x: np.ndarray
    y: int
    weight: float = 1.0
    provenance: str = "seed"
    frame: int = 0
    # identity of the source cluster, when the sample came from a trajectory
    cluster: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.y not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.y!r}")
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"sample weight {self.weight!r} outside [0, 1]")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")


def _check_dim(m: DynamicModel, x: np.ndarray) -> None:
    if x.ndim != 1 or x.shape[0] != m.weights.shape[0]:
        raise ShapeError(
            f"feature vector of shape {x.shape} does not match model dimension "
            f"{m.weights.shape[0]}"
        )


def sigmoid(z: float) -> float:
    if z >= 0:
        p = 1.0 / (1.0 + math.exp(-z))
    else:
        e = math.exp(z) if z > -745.0 else 0.0
        p = e / (1.0 + e)
    return min(max(p, P_MIN), P_MAX)


def softplus(z: float) -> float:
    return max(z, 0.0) + math.log1p(math.exp(-abs(z)))


def decision(m: DynamicModel, x: np.ndarray) -> float:
    _check_dim(m, x)
    return float(m.weights @ x) + m.bias


def dyn_predict(m: DynamicModel, x: np.ndarray) -> float:
    """Probability that ``x`` is a human according to the dynamic model."""
    return sigmoid(decision(m, x))


def dyn_predict_batch(m: DynamicModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != m.n_features:
        raise ShapeError(f"batch of shape {X.shape} does not match dimension {m.n_features}")
    z = X @ m.weights + m.bias
    with np.errstate(over="ignore"):
        p = 1.0 / (1.0 + np.exp(-z))
    return np.clip(p, P_MIN, P_MAX)


def loss_and_gradient(m: DynamicModel, s: LabeledSample):
    """Weighted logistic loss of one sample and its gradient in (w, b)."""
    z = decision(m, s.x)
    # -y log p - (1-y) log(1-p) == softplus(z) - y z, without log(0)
    loss = s.weight * (softplus(z) - s.y * z)
    coef = s.weight * (sigmoid(z) - s.y)
    grad = np.empty(m.n_features + 1)
    np.multiply(s.x, coef, out=grad[:-1])
    grad[-1] = coef
    return loss, grad


def learning_rate(m: DynamicModel) -> float:
    return m.lr0 / math.sqrt(m.updates + 1)


def online_step(m: DynamicModel, s: LabeledSample):
    """Loss of ``s`` under ``m`` and the model after one gradient step.

    Same arithmetic as :func:`loss_and_gradient` followed by
    :func:`apply_gradient`, without materializing the gradient vector.
    """
    z = decision(m, s.x)
    loss = s.weight * (softplus(z) - s.y * z)
    coef = s.weight * (sigmoid(z) - s.y)
    if not math.isfinite(coef) or not np.isfinite(s.x).all():
        raise NumericalFailureError("non-finite gradient, model left unchanged")
    eta = m.lr0 / math.sqrt(m.updates + 1)
    return loss, DynamicModel(m.weights - eta * (s.x * coef), m.bias - eta * coef, m.updates + 1, m.lr0)


def dyn_update(m: DynamicModel, s: LabeledSample) -> DynamicModel:
    """One online gradient step with step size lr0 / sqrt(t)."""
    return online_step(m, s)[1]


def apply_gradient(m: DynamicModel, grad: np.ndarray) -> DynamicModel:
    if not np.all(np.isfinite(grad)):
        raise NumericalFailureError("non-finite gradient, model left unchanged")
    eta = learning_rate(m)
    return DynamicModel(
        m.weights - eta * grad[:-1],
        m.bias - eta * grad[-1],
        m.updates + 1,
        m.lr0,
    )


@dataclass(frozen=True)
class StaticDetectorConfig:
    accuracy: float = 0.9
    confidence_concentration: float = 2.0
    seed: int = 0

    def validate(self) -> "StaticDetectorConfig":
        errors = []
        if not 0.5 < self.accuracy <= 1.0:
            errors.append(f"static_detector.accuracy={self.accuracy} must be in (0.5, 1]")
        if not self.confidence_concentration > 0:
            errors.append("static_detector.confidence_concentration must be positive")
        if errors:
            raise ConfigValidationError(errors)
        return self


def _confidence(is_human: bool, u_side: float, u_margin: float, cfg: StaticDetectorConfig) -> float:
    correct = u_side < cfg.accuracy
    # margin ~ Beta(k, 1): concentrates at 1 as k grows
    if math.isinf(cfg.confidence_concentration):
        margin = 1.0
    else:
        margin = u_margin ** (1.0 / cfg.confidence_concentration)
    positive = is_human == correct
    p = 0.5 + 0.5 * margin if positive else 0.5 - 0.5 * margin
    return min(max(p, EPS), 1.0 - EPS)


def _bitgen(seed) -> np.random.PCG64:
    if isinstance(seed, np.random.SeedSequence):
        return np.random.PCG64(seed)
    return np.random.PCG64(np.random.SeedSequence(int(seed)))


def static_detect(cluster, cfg: StaticDetectorConfig, draw_index: int = 0) -> DetectionConfidence:
    """Confidence the pretrained detector emits for the ``draw_index``-th cluster
    of its stream. Matches :class:`StaticOracleDetector` drawing in sequence."""
    bg = _bitgen(cfg.seed)
    bg.advance(2 * int(draw_index))
    u_side, u_margin = np.random.Generator(bg).random(2)
    return DetectionConfidence(
        _confidence(cluster.truth == "human", u_side, u_margin, cfg),
        detector_id=0,
        detection_id=int(draw_index),
    )


class StaticOracleDetector(BaseEstimator):
    """Pretrained teacher simulated as a ground-truth-informed stochastic oracle.

    It reads each cluster's hidden truth and is right with probability
    ``accuracy``. Draws come from the detector's own seeded stream; the n-th
    cluster scored always consumes the n-th pair of uniforms.
    """

    def __init__(self, accuracy=0.9, confidence_concentration=2.0, seed=0):
        self.accuracy = accuracy
        self.confidence_concentration = confidence_concentration
        self.seed = seed

    @property
    def config(self) -> StaticDetectorConfig:
        return StaticDetectorConfig(self.accuracy, self.confidence_concentration, self.seed)

    def reset(self) -> "StaticOracleDetector":
        self.config.validate()
        self._rng = np.random.Generator(_bitgen(self.seed))
        self.n_draws_ = 0
        return self

    def detect(self, clusters: Sequence) -> np.ndarray:
        if not hasattr(self, "_rng"):
            self.reset()
        n = len(clusters)
        if n == 0:
            return np.empty(0)
        u = self._rng.random((n, 2))
        cfg = self.config
        out = np.array(
            [_confidence(c.truth == "human", u[i, 0], u[i, 1], cfg) for i, c in enumerate(clusters)]
        )
        self.n_draws_ += n
        return out

    def eval_accuracy(self, samples: Sequence[LabeledSample], seed) -> float:
        """Accuracy on labelled samples, using a throwaway stream so the run
        stream is not perturbed."""
        cfg = self.config
        rng = np.random.Generator(_bitgen(seed))
        u = rng.random((len(samples), 2))
        correct = 0
        for i, s in enumerate(samples):
            p = _confidence(s.y == 1, u[i, 0], u[i, 1], cfg)
            correct += int((p > 0.5) == (s.y == 1))
        return correct / len(samples)


class OnlineLogisticClassifier(ClassifierMixin, BaseEstimator):
    """Logistic regression trained by online gradient descent.

    ``fit`` makes a single sequential pass; ``partial_fit`` continues from the
    current state. Step size decays as ``lr0 / sqrt(t)``.
    """

    def __init__(self, lr0=0.5):
        self.lr0 = lr0

    def _init_model(self, n_features):
        self.model_ = DynamicModel.zeros(n_features, self.lr0)
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = n_features

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y)
        self._init_model(X.shape[1])
        return self._consume(X, y, sample_weight)

    def partial_fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y)
        if not hasattr(self, "model_"):
            self._init_model(X.shape[1])
        elif X.shape[1] != self.n_features_in_:
            raise ShapeError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self._consume(X, y, sample_weight)

    def _consume(self, X, y, sample_weight):
        if not set(np.unique(y)) <= {0, 1}:
            raise ValueError("labels must be 0 or 1")
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, float)
        model = self.model_
        for xi, yi, wi in zip(X, y, w):
            model = dyn_update(model, LabeledSample(xi, int(yi), float(wi)))
        self.model_ = model
        return self

    @property
    def coef_(self):
        check_is_fitted(self, "model_")
        return self.model_.weights[np.newaxis, :]

    @property
    def intercept_(self):
        check_is_fitted(self, "model_")
        return np.array([self.model_.bias])

    @property
    def n_updates_(self) -> int:
        check_is_fitted(self, "model_")
        return self.model_.updates

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        return X @ self.model_.weights + self.model_.bias

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        p = dyn_predict_batch(self.model_, check_array(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)
