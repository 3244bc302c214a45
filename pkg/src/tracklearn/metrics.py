"""Regret, stability and convergence bookkeeping for an online run."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .detectors import DynamicModel, LabeledSample, dyn_predict_batch, softplus
from .exceptions import AlignmentError, EmptyInputError, InsufficientDataError

L2 = 1e-8


@dataclass(frozen=True)
class EvalRecord:
    t: int
    u: int
    online_loss: float
    eval_accuracy: float


@dataclass
class MetricsLog:
    eval_set_size: int
    baseline_accuracy: float = float("nan")
    records: List[EvalRecord] = field(default_factory=list)
    sample_losses: List[float] = field(default_factory=list)
    static_eval_accuracy: float = float("nan")

    def append(self, record: EvalRecord) -> None:
        if self.records and record.t <= self.records[-1].t:
            raise ValueError(f"evaluation step {record.t} is not after {self.records[-1].t}")
        if not 0 <= record.u <= self.eval_set_size:
            raise ValueError(f"u={record.u} outside [0, {self.eval_set_size}]")
        self.records.append(record)

    @property
    def u(self) -> List[int]:
        return [r.u for r in self.records]


@dataclass(frozen=True)
class HindsightOptimum:
    w_star: np.ndarray
    training_loss: float
    converged_flag: bool
    iterations: int = 0
    grad_norm: float = float("nan")

    def as_model(self, lr0: float = 0.5) -> DynamicModel:
        return DynamicModel(self.w_star[:-1].copy(), float(self.w_star[-1]), 0, lr0)


# -- stability ----------------------------------------------------------------


def stability(log: MetricsLog, T: int) -> int:
    """Sum of absolute changes in the correct-prediction count over the first
    ``T`` evaluations."""
    if T < 1:
        raise InsufficientDataError(f"horizon T must be >= 1, got {T}")
    if T > len(log.records):
        raise InsufficientDataError(f"horizon T={T} exceeds {len(log.records)} records")
    u = log.u[:T]
    return sum(abs(a - b) for a, b in zip(u, u[1:]))


def stability_rate(log: MetricsLog, T: int) -> float:
    return stability(log, T) / T


def windowed_stability(log: MetricsLog, window: int) -> float:
    """Mean |u_t - u_{t+1}| / eval_set_size over the last ``window`` records."""
    if window > len(log.records):
        raise InsufficientDataError(f"window {window} exceeds {len(log.records)} records")
    u = log.u[len(log.records) - window:]
    if len(u) < 2:
        return 0.0
    return sum(abs(a - b) for a, b in zip(u, u[1:])) / ((len(u) - 1) * log.eval_set_size)


def converged(log: MetricsLog, window: int, tau: float, delta: float) -> bool:
    """True once performance both stopped moving and sits inside the
    expectation band below the baseline."""
    if window < 1:
        raise InsufficientDataError("window must be >= 1")
    rate = windowed_stability(log, window)
    acc = math.fsum(r.eval_accuracy for r in log.records[-window:]) / window
    return rate <= tau and acc >= log.baseline_accuracy - delta


# -- losses -------------------------------------------------------------------


def _design(samples: Sequence[LabeledSample]):
    X = np.array([s.x for s in samples], dtype=float)
    Xb = np.hstack([X, np.ones((len(samples), 1))])
    y = np.array([s.y for s in samples], dtype=float)
    w = np.array([s.weight for s in samples], dtype=float)
    return Xb, y, w


def sample_loss(theta: np.ndarray, s: LabeledSample, l2: float = L2) -> float:
    """Weighted logistic loss of one sample plus the ridge term on (w, b)."""
    z = float(theta[:-1] @ s.x) + float(theta[-1])
    return s.weight * (softplus(z) - s.y * z) + 0.5 * l2 * float(theta @ theta)


def losses_at(theta: np.ndarray, samples: Sequence[LabeledSample], l2: float = L2) -> List[float]:
    """:func:`sample_loss` for every sample, with the ridge term computed once."""
    w, b = theta[:-1], float(theta[-1])
    reg = 0.5 * l2 * float(theta @ theta)
    out = []
    for s in samples:
        z = float(w @ s.x) + b
        out.append(s.weight * (softplus(z) - s.y * z) + reg)
    return out


def _batch_loss(theta, Xb, y, w, l2):
    z = Xb @ theta
    sp = np.logaddexp(0.0, z)
    return w * (sp - y * z) + 0.5 * l2 * float(theta @ theta)


def _objective(theta, Xb, y, w, l2):
    """Mean regularized loss, its gradient and Hessian."""
    n = Xb.shape[0]
    z = Xb @ theta
    p = np.exp(-np.logaddexp(0.0, -z))
    val = float(np.sum(w * (np.logaddexp(0.0, z) - y * z))) / n + 0.5 * l2 * float(theta @ theta)
    grad = Xb.T @ (w * (p - y)) / n + l2 * theta
    hess = (Xb * (w * p * (1.0 - p))[:, None]).T @ Xb / n + l2 * np.eye(theta.shape[0])
    return val, grad, hess


def hindsight_optimum(
    samples: Sequence[LabeledSample], l2: float = L2, tol: float = 1e-6, max_iter: int = 500
) -> HindsightOptimum:
    """Best fixed (w, b) for the whole stream, found after the fact.

    Minimizes the mean regularized loss by descent with Armijo backtracking.
    The search direction is the Newton direction when the Hessian solve is
    usable and the negative gradient otherwise.
    """
    if len(samples) == 0:
        raise EmptyInputError("hindsight optimum needs at least one sample")
    Xb, y, w = _design(samples)
    theta = np.zeros(Xb.shape[1])
    val, grad, hess = _objective(theta, Xb, y, w, l2)
    gnorm = float(np.linalg.norm(grad))
    it = 0
    while gnorm > tol and it < max_iter:
        it += 1
        try:
            direction = -np.linalg.solve(hess, grad)
            if not np.all(np.isfinite(direction)) or direction @ grad >= 0:
                raise np.linalg.LinAlgError
        except np.linalg.LinAlgError:
            direction = -grad
        step, slope = 1.0, float(direction @ grad)
        while step > 1e-20:
            cand = theta + step * direction
            cval = float(np.sum(_batch_loss(cand, Xb, y, w, 0.0))) / len(y) + 0.5 * l2 * float(cand @ cand)
            if cval <= val + 1e-4 * step * slope:
                break
            step *= 0.5
        else:
            break
        theta = cand
        val, grad, hess = _objective(theta, Xb, y, w, l2)
        gnorm = float(np.linalg.norm(grad))
    total = math.fsum(losses_at(theta, samples, l2))
    return HindsightOptimum(theta, total, gnorm <= tol, it, gnorm)


def regret(log: MetricsLog, opt: HindsightOptimum, samples: Sequence[LabeledSample], l2: float = L2) -> float:
    """Cumulative online loss minus the loss of the hindsight optimum on the
    same samples."""
    if len(log.sample_losses) != len(samples):
        raise AlignmentError(
            f"{len(log.sample_losses)} online losses for {len(samples)} samples"
        )
    online = math.fsum(log.sample_losses)
    best = math.fsum(losses_at(opt.w_star, samples, l2))
    return online - best


# -- evaluation ---------------------------------------------------------------


def correct_count(model: DynamicModel, X: np.ndarray, y: np.ndarray) -> int:
    pred = dyn_predict_batch(model, X) > 0.5
    return int(np.count_nonzero(pred == (y == 1)))


def eval_arrays(samples: Sequence[LabeledSample]):
    X = np.array([s.x for s in samples], dtype=float)
    y = np.array([s.y for s in samples], dtype=int)
    return X, y


class HindsightLogisticRegression(ClassifierMixin, BaseEstimator):
    """Batch ridge-logistic regression used as the fixed comparator."""

    def __init__(self, l2=L2, tol=1e-6, max_iter=500):
        self.l2 = l2
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y, sample_weight=None):
        X, y = check_X_y(X, y)
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, float)
        samples = [LabeledSample(xi, int(yi), float(wi)) for xi, yi, wi in zip(X, y, w)]
        self.optimum_ = hindsight_optimum(samples, self.l2, self.tol, self.max_iter)
        self.coef_ = self.optimum_.w_star[np.newaxis, :-1]
        self.intercept_ = self.optimum_.w_star[-1:]
        self.converged_ = self.optimum_.converged_flag
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "optimum_")
        p = dyn_predict_batch(self.optimum_.as_model(), check_array(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.predict_proba(X)[:, 1] > 0.5).astype(int)
