import itertools
import math
import random

import pytest
from hypothesis import given, strategies as st

from oracles import naive_fusion
from tracklearn.exceptions import EmptyInputError, InvalidProbabilityError
from tracklearn.fusion import EPS, DetectionConfidence, DetectionSet, fuse, odds

probs = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


@pytest.mark.parametrize("p, expected", [(0.5, 1.0), (0.8, 4.0)])
def test_odds_values(p, expected):
    assert odds(p) == pytest.approx(expected, rel=1e-15)


def test_odds_clamps_saturated_confidence():
    assert odds(1.0) == odds(1 - EPS)
    assert odds(0.0) == odds(EPS)


@pytest.mark.parametrize("bad", [-0.1, 1.5, float("nan")])
def test_odds_rejects_out_of_range(bad):
    with pytest.raises(InvalidProbabilityError):
        odds(bad)


def test_fuse_examples():
    assert fuse([0.8]) == pytest.approx(0.8, abs=1e-12)
    assert fuse([0.7, 0.3]) == pytest.approx(0.5, abs=1e-12)
    assert fuse([0.8, 0.6]) == pytest.approx(6 / 7, abs=1e-12)


def test_fuse_empty_is_an_error():
    with pytest.raises(EmptyInputError):
        fuse([])
    with pytest.raises(EmptyInputError):
        DetectionSet.from_detections([])


def test_detection_set_bounds():
    dets = [DetectionConfidence(0.7, 0, 0), DetectionConfidence(0.6, 0, 1), DetectionConfidence(0.9, 2, 0)]
    ds = DetectionSet.from_detections(dets)
    assert (ds.o, ds.k) == (3, 2)
    assert fuse(ds) == pytest.approx(naive_fusion([0.7, 0.6, 0.9]), abs=1e-12)


def test_detection_confidence_is_clamped():
    assert DetectionConfidence(1.0).prob == 1 - EPS


@given(st.lists(probs, min_size=1, max_size=8), st.randoms(use_true_random=False))
def test_permutation_invariance_is_exact(ps, rnd):
    shuffled = ps[:]
    rnd.shuffle(shuffled)
    assert fuse(shuffled) == fuse(ps)


@given(st.floats(min_value=0.0, max_value=1.0))
def test_identity(p):
    assert fuse([p]) == pytest.approx(min(max(p, EPS), 1 - EPS), abs=1e-12)


@given(st.floats(min_value=0.01, max_value=0.99), st.integers(min_value=2, max_value=10))
def test_reinforcement(p, n):
    fused = fuse([p] * n)
    if p > 0.5:
        assert fused > p
    elif p < 0.5:
        assert fused < p
    else:
        assert fused == 0.5


@given(st.lists(st.floats(min_value=0.01, max_value=0.98), min_size=1, max_size=6), st.data())
def test_monotone_in_each_detection(ps, data):
    i = data.draw(st.integers(min_value=0, max_value=len(ps) - 1))
    bumped = ps[:]
    bumped[i] = ps[i] + 0.01
    assert fuse(bumped) > fuse(ps)


def test_grid_oracle_equivalence():
    grid = [k / 10 for k in range(1, 10)]
    for n in range(1, 6):
        for combo in itertools.combinations_with_replacement(grid, n):
            assert abs(fuse(combo) - naive_fusion(combo)) <= 1e-12
