import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tracklearn.exceptions import ConfigValidationError, EndOfStream, InvalidArgumentError
from tracklearn.metrics import correct_count, eval_arrays, hindsight_optimum
from tracklearn.simulator import (
    ReplayWorld,
    WorldConfig,
    dump_stream,
    eval_set,
    init_world,
    stream,
    tick,
)

QUIET = dict(feature_noise=0.0, centroid_noise=0.0, miss_rate=0.0, false_positive_rate=0.0)


def frames_of(cfg, n):
    w = init_world(cfg)
    return [tick(w) for _ in range(n)]


def test_empty_world():
    cfg = WorldConfig(n_humans=0, n_clutter=0, false_positive_rate=0.0, frames=30)
    assert all(f == [] for f in frames_of(cfg, 30))


def test_same_config_same_stream():
    cfg = WorldConfig(n_humans=3, n_clutter=3, frames=50, seed=5)
    a, b = frames_of(cfg, 50), frames_of(cfg, 50)
    for fa, fb in zip(a, b):
        assert [c.to_record() for c in fa] == [c.to_record() for c in fb]


def test_different_seed_differs():
    a = frames_of(WorldConfig(n_humans=2, n_clutter=0, seed=1, frames=3), 1)
    b = frames_of(WorldConfig(n_humans=2, n_clutter=0, seed=2, frames=3), 1)
    assert not np.array_equal(a[0][0].centroid, b[0][0].centroid)


def test_single_feature_dimension_rejected():
    with pytest.raises(ConfigValidationError) as err:
        init_world(WorldConfig(feature_dim=1, miss_rate=2.0))
    assert len(err.value.violations) == 2


def test_zero_noise_centroid_is_position():
    w = init_world(WorldConfig(n_humans=4, n_clutter=4, frames=20, **QUIET))
    for _ in range(10):
        clusters = tick(w)
        assert len(clusters) == 8
        for c in clusters:
            assert np.array_equal(c.centroid, w.positions[c.agent_id])


def test_miss_rate_one_leaves_only_false_positives():
    cfg = WorldConfig(n_humans=5, n_clutter=5, miss_rate=1.0, false_positive_rate=0.5, frames=200)
    seen = 0
    for clusters in frames_of(cfg, 200):
        for c in clusters:
            assert c.agent_id is None and c.truth == "clutter"
            seen += 1
    assert 50 < seen < 150


def test_walking_speed_gives_tenth_of_a_meter_per_frame():
    cfg = WorldConfig(n_humans=1, n_clutter=0, human_speed_range=(1.0, 1.0), frames=100, **QUIET)
    w = init_world(cfg)
    prev, odo = tick(w)[0].centroid, w.odometer[0]
    straight = 0
    for _ in range(60):
        cur = tick(w)[0].centroid
        assert w.odometer[0] - odo == pytest.approx(0.1, abs=1e-12)
        step = float(np.linalg.norm(cur - prev))
        assert step <= 0.1 + 1e-12
        straight += step == pytest.approx(0.1, abs=1e-12)
        prev, odo = cur, w.odometer[0]
    assert straight >= 55


def test_end_of_stream():
    w = init_world(WorldConfig(n_humans=1, n_clutter=0, frames=3))
    assert len(list(stream(w))) == 3
    with pytest.raises(EndOfStream):
        tick(w)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.2, 1.0), st.floats(0.1, 1.5))
def test_agent_speeds_stay_in_range(seed, lo, width):
    hi = lo + width
    cfg = WorldConfig(n_humans=4, n_clutter=4, human_speed_range=(lo, hi), frames=300, seed=seed)
    w = init_world(cfg)
    for _ in stream(w):
        pass
    elapsed = cfg.frames * cfg.dt
    speeds = w.odometer / elapsed
    assert np.all(speeds[:4] >= lo - 1e-9) and np.all(speeds[:4] <= hi + 1e-9)
    clo, chi = cfg.clutter_speed_range
    assert np.all(speeds[4:] >= clo - 1e-12) and np.all(speeds[4:] <= chi + 1e-9)


def test_eval_set_balanced_and_deterministic():
    cfg = WorldConfig(seed=3)
    a, b = eval_set(cfg, 500), eval_set(cfg, 500)
    assert sum(s.y for s in a) == 250
    assert all(np.array_equal(x.x, y.x) and x.y == y.y for x, y in zip(a, b))


def test_eval_set_too_small():
    with pytest.raises(InvalidArgumentError):
        eval_set(WorldConfig(), 1)


def test_eval_set_independent_of_world():
    cfg = WorldConfig(n_humans=2, n_clutter=2, frames=5, seed=4)
    feats = {tuple(c.features) for f in frames_of(cfg, 5) for c in f}
    assert not feats & {tuple(s.x) for s in eval_set(cfg, 100)}


def test_well_separated_eval_set_is_linearly_separable():
    cfg = WorldConfig(class_feature_separation=10.0, feature_noise=0.1)
    samples = eval_set(cfg, 500)
    opt = hindsight_optimum(samples)
    X, y = eval_arrays(samples)
    assert correct_count(opt.as_model(), X, y) == 500


def test_stream_dump_replays_identically(tmp_path):
    cfg = WorldConfig(n_humans=2, n_clutter=2, frames=25, seed=8)
    path = tmp_path / "stream.jsonl"
    assert dump_stream(init_world(cfg), path) == 25
    live = frames_of(cfg, 25)
    replay = ReplayWorld(path)
    assert replay.cfg == cfg
    for frame in live:
        got = replay.tick()
        assert [c.to_record() for c in got] == [c.to_record() for c in frame]
    with pytest.raises(EndOfStream):
        replay.tick()
