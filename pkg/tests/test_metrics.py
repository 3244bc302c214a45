import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import logistic_loss
from tracklearn.detectors import DynamicModel, LabeledSample, dyn_predict, dyn_update
from tracklearn.exceptions import AlignmentError, EmptyInputError, InsufficientDataError
from tracklearn.metrics import (
    EvalRecord,
    HindsightLogisticRegression,
    MetricsLog,
    converged,
    hindsight_optimum,
    losses_at,
    regret,
    stability,
    stability_rate,
    windowed_stability,
)


def log_of(u, n=10, baseline=0.9):
    log = MetricsLog(eval_set_size=n, baseline_accuracy=baseline)
    for t, ut in enumerate(u, start=1):
        log.append(EvalRecord(t, ut, 0.0, ut / n))
    return log


# -- stability ----------------------------------------------------------------


def test_stability_examples():
    assert stability(log_of([10, 10, 10, 10]), 4) == 0
    assert stability(log_of([8, 10, 9, 9]), 4) == 3
    assert stability(log_of([8, 10, 9, 9]), 1) == 0


def test_stability_rate_examples():
    assert stability_rate(log_of([7] * 30), 30) == 0
    alt = log_of([9, 10] * 50)
    assert stability_rate(alt, 100) == pytest.approx(0.99)
    assert stability_rate(log_of([8, 10, 9, 9]), 4) == 0.75


def test_stability_horizon_errors():
    with pytest.raises(InsufficientDataError):
        stability(log_of([1, 2]), 3)
    with pytest.raises(InsufficientDataError):
        stability_rate(log_of([1, 2]), 0)


def test_log_rejects_bad_records():
    log = log_of([1, 2])
    with pytest.raises(ValueError):
        log.append(EvalRecord(2, 3, 0.0, 0.3))
    with pytest.raises(ValueError):
        log.append(EvalRecord(5, 11, 0.0, 1.1))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 100), min_size=1, max_size=200), st.integers(0, 100))
def test_rate_vanishes_for_eventually_constant_sequences(prefix, tail_value):
    u = prefix + [tail_value] * (10_000 - len(prefix))
    log = log_of(u, n=100)
    short, long_ = stability_rate(log, 1000), stability_rate(log, 10_000)
    if short > 0:
        assert long_ < short
    else:
        assert long_ == 0


def test_windowed_stability_normalizes_by_eval_size():
    log = log_of([10, 8, 10, 8, 10], n=100)
    assert windowed_stability(log, 5) == pytest.approx(0.02)
    assert windowed_stability(log, 1) == 0.0


# -- convergence --------------------------------------------------------------


def test_converged_examples():
    assert converged(log_of([90] * 50, n=100, baseline=0.9), 40, 0.02, 0.02)
    assert not converged(log_of([80, 90] * 25, n=100, baseline=0.85), 40, 0.02, 0.02)
    assert not converged(log_of([86] * 50, n=100, baseline=0.9), 40, 0.02, 0.02)


def test_converged_window_too_large():
    with pytest.raises(InsufficientDataError):
        converged(log_of([9] * 5), 6, 0.1, 0.1)


# -- hindsight optimum --------------------------------------------------------


def four_point_set():
    pts = [([2.0, 1.0], 1), ([1.0, 2.0], 1), ([-2.0, -1.0], 0), ([-1.0, -2.0], 0)]
    return [LabeledSample(np.array(x), y) for x, y in pts]


def test_separable_set_is_fit():
    samples = four_point_set()
    opt = hindsight_optimum(samples)
    model = opt.as_model()
    acc = np.mean([(dyn_predict(model, s.x) > 0.5) == bool(s.y) for s in samples])
    assert acc == 1.0
    assert opt.training_loss <= 0.01
    assert opt.converged_flag and opt.grad_norm <= 1e-6


def test_single_repeated_sample():
    s = LabeledSample(np.array([0.7]), 1)
    opt = hindsight_optimum([s] * 5)
    assert dyn_predict(opt.as_model(), s.x) >= 0.99


def test_zero_weight_samples_give_zero_optimum():
    samples = [LabeledSample(np.array([1.0, -1.0]), k % 2, 0.0) for k in range(6)]
    opt = hindsight_optimum(samples)
    assert not opt.w_star.any()


def test_empty_samples():
    with pytest.raises(EmptyInputError):
        hindsight_optimum([])


def test_optimum_matches_scipy_minimizer(rng):
    from scipy.optimize import minimize

    X = rng.standard_normal((60, 3))
    y = (X @ [1.0, -0.5, 0.2] + 0.3 * rng.standard_normal(60) > 0).astype(int)
    samples = [LabeledSample(xi, int(yi)) for xi, yi in zip(X, y)]
    opt = hindsight_optimum(samples)

    def f(th):
        return sum(logistic_loss(th, s.x, s.y, 1.0) for s in samples) + 30 * 1e-8 * th @ th

    ref = minimize(f, np.zeros(4), method="BFGS", options={"gtol": 1e-9})
    assert np.allclose(opt.w_star, ref.x, atol=1e-4)


# -- regret -------------------------------------------------------------------


def test_regret_zero_when_online_equals_optimum():
    samples = four_point_set()
    opt = hindsight_optimum(samples)
    log = MetricsLog(4, sample_losses=losses_at(opt.w_star, samples))
    assert regret(log, opt, samples) == 0.0


def test_regret_of_zero_model():
    samples = four_point_set()[:3]
    opt = hindsight_optimum(samples)
    log = MetricsLog(3, sample_losses=[math.log(2)] * 3)
    best = sum(logistic_loss(opt.w_star, s.x, s.y, 1.0) for s in samples)
    best += 3 * 0.5e-8 * float(opt.w_star @ opt.w_star)
    assert regret(log, opt, samples) == pytest.approx(3 * math.log(2) - best, abs=1e-12)


def test_regret_alignment():
    samples = four_point_set()
    opt = hindsight_optimum(samples)
    with pytest.raises(AlignmentError):
        regret(MetricsLog(4, sample_losses=[0.1]), opt, samples)


def test_optimum_beats_any_fixed_online_iterate(rng):
    X = rng.standard_normal((200, 4))
    y = (X[:, 0] - X[:, 2] > 0).astype(int)
    samples = [LabeledSample(xi, int(yi)) for xi, yi in zip(X, y)]
    m = DynamicModel.zeros(4)
    for s in samples:
        m = dyn_update(m, s)
    opt = hindsight_optimum(samples)
    final = math.fsum(losses_at(m.params(), samples))
    assert opt.training_loss <= final + 1e-9


def test_metrics_are_pure():
    samples = four_point_set()
    a, b = hindsight_optimum(samples), hindsight_optimum(samples)
    assert np.array_equal(a.w_star, b.w_star) and a.training_loss == b.training_loss


def test_estimator_wrapper(rng):
    X = rng.standard_normal((40, 2))
    y = (X[:, 0] > 0).astype(int)
    est = HindsightLogisticRegression().fit(X, y)
    assert est.converged_
    assert est.score(X, y) >= 0.95
    assert est.predict_proba(X).shape == (40, 2)
