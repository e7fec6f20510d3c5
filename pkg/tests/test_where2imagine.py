import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from imaginenav.control import plan_to_cell
from imaginenav.percept import feature_dim
from imaginenav.where2imagine import (
    MAX_DTHETA,
    DemoSample,
    Regressor,
    RelativeWaypoint,
    TrainHyper,
    TrainingDivergenceError,
    body_to_world,
    clamp_waypoint,
    collect_demos,
    gradient_check,
    keep_sample,
    load_demos,
    predict_waypoint,
    relative_waypoint,
    save_demos,
    train_regressor,
    walk_samples,
)
from imaginenav.world import Pose, WorldParams, generate_world, world_from_ascii

CORRIDOR = ["#" * 34, "#" + "." * 32 + "#", "#" * 34]


def test_corridor_label_is_straight_ahead():
    w = world_from_ascii(CORRIDOR)
    start = Pose(*w.cell_center((1, 1)), 0.0)
    _, poses, reached = plan_to_cell(w, start, (30, 1), budget=100)
    assert reached
    samples = list(walk_samples(w, [start] + poses, horizon=8, world_seed=0))
    assert samples
    for s in samples:
        assert s.label.dx == pytest.approx(0.0, abs=1e-12)
        assert s.label.dy == pytest.approx(2.0)
        assert s.label.dtheta == pytest.approx(0.0, abs=1e-12)


def test_filters():
    ok = RelativeWaypoint(0.0, 1.0, 0.0)
    assert not keep_sample(0.2, ok)
    assert keep_sample(0.3, ok)
    assert not keep_sample(2.0, RelativeWaypoint(0.0, 1.0, math.radians(45)))
    assert keep_sample(2.0, RelativeWaypoint(0.0, 1.0, math.radians(30)))


def test_shallow_views_are_dropped():
    # facing a wall from the adjacent cell: mean depth is 0.125 m
    w = world_from_ascii(["#####", "#...#", "#####"])
    p = Pose(*w.cell_center((3, 1)), 0.0)
    dropped = {"depth": 0, "angle": 0}
    assert list(walk_samples(w, [p, p], 1, 0, dropped)) == []
    assert dropped["depth"] == 1


@pytest.fixture(scope="module")
def demos():
    worlds = [generate_world(s, WorldParams(width=24, height=24, rooms=2)) for s in range(4)]
    return collect_demos(worlds, 11, 100, seed=3)


def test_collected_demos_satisfy_filters(demos):
    assert len(demos) >= 320
    for d in demos:
        assert d.source_mean_depth >= 0.3
        assert abs(d.label.dtheta) <= MAX_DTHETA + 1e-12
    assert demos.skipped_worlds == 0


def test_collection_is_deterministic(demos):
    worlds = [generate_world(s, WorldParams(width=24, height=24, rooms=2)) for s in range(4)]
    again = collect_demos(worlds, 11, 100, seed=3)
    assert len(again) == len(demos)
    assert all(a == b and np.array_equal(a.feature, b.feature) for a, b in zip(again, demos))


def test_world_without_pairs_is_skipped():
    w = world_from_ascii(["###", "#.#", "###"])
    out = collect_demos([w], 3, 10)
    assert len(out) == 0 and out.skipped_worlds == 1


def test_bad_collection_args():
    with pytest.raises(ValueError):
        collect_demos([], 3)
    with pytest.raises(ValueError):
        collect_demos([world_from_ascii(CORRIDOR)], 0)


def test_demo_jsonl_round_trip(tmp_path, demos):
    path = tmp_path / "d.jsonl"
    save_demos(path, demos[:20])
    back = load_demos(path)
    assert list(back) == list(demos[:20])
    for a, b in zip(back, demos[:20]):
        np.testing.assert_array_equal(a.feature, b.feature)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0, 2 * math.pi, exclude_max=True),
       st.floats(-3, 3), st.floats(-3, 3), st.floats(-0.5, 0.5))
def test_relative_waypoint_inverts_body_to_world(x, y, th, dx, dy, dth):
    origin = Pose(x, y, th)
    wp = RelativeWaypoint(dx, dy, dth)
    back = relative_waypoint(origin, body_to_world(origin, wp))
    assert back.dx == pytest.approx(dx, abs=1e-9)
    assert back.dy == pytest.approx(dy, abs=1e-9)
    assert back.dtheta == pytest.approx(dth, abs=1e-9)


def _constant_demos(n=400, label=(0.5, 1.5, 0.1)):
    rng = np.random.default_rng(0)
    wp = RelativeWaypoint(*label)
    return [DemoSample(rng.random(12), wp, 0, i) for i in range(n)]


def test_constant_labels_collapse():
    model, curve = train_regressor(_constant_demos(), TrainHyper(epochs=60))
    assert curve[-1] < 1e-3
    assert all(math.isfinite(v) for v in curve)


def test_training_is_deterministic():
    d = _constant_demos()
    a, ca = train_regressor(d, TrainHyper(epochs=5), seed=4)
    b, cb = train_regressor(d, TrainHyper(epochs=5), seed=4)
    assert ca == cb
    assert all(np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_too_few_demos():
    with pytest.raises(ValueError):
        train_regressor(_constant_demos(100), TrainHyper(batch_size=32))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_names_epoch():
    d = _constant_demos(label=(1e200, 1e200, 0.0))
    with pytest.raises(TrainingDivergenceError) as exc:
        train_regressor(d, TrainHyper(epochs=3))
    assert exc.value.epoch == 1
    assert "epoch 1" in str(exc.value)


def test_training_reduces_loss_on_demos(demos):
    _, curve = train_regressor(demos, TrainHyper(epochs=30))
    assert curve[-1] < curve[0] / 5


def test_zero_feature_gives_bias_path_output():
    m = Regressor.init(10, 8, seed=1)
    wp = predict_waypoint(m, np.zeros(10))
    raw = m.W2 @ np.tanh(m.b1) + m.b2
    assert wp == clamp_waypoint(raw, m.max_step_radius)


def test_clamp_examples():
    assert clamp_waypoint([0.0, 1.0, 0.9]).dtheta == pytest.approx(math.radians(30))
    w = clamp_waypoint([3.0, 4.0, 0.0], 3.0)
    assert math.hypot(w.dx, w.dy) == pytest.approx(3.0)
    assert w.dx / w.dy == pytest.approx(0.75)


@given(st.lists(st.floats(-1e6, 1e6), min_size=3, max_size=3))
def test_clamp_invariants(raw):
    w = clamp_waypoint(raw, 3.0)
    assert abs(w.dtheta) <= MAX_DTHETA
    assert math.hypot(w.dx, w.dy) <= 3.0 + 1e-9


def test_predict_dimension_mismatch():
    with pytest.raises(ValueError):
        predict_waypoint(Regressor.init(10), np.zeros(9))


def test_gradient_check_random_models():
    rng = np.random.default_rng(0)
    for k in range(5):
        m = Regressor.init(feature_dim(8), 16, seed=k)
        s = DemoSample(rng.random(feature_dim(8)), RelativeWaypoint(*rng.normal(size=3)), 0, 0)
        err = gradient_check(m, s)
        assert err < 1e-4
        assert gradient_check(m, s) == err


def test_gradient_check_zero_weights():
    m = Regressor.init(6, 4, seed=0)
    for p in m.params():
        p[...] = 0.0
    s = DemoSample(np.linspace(0.1, 0.6, 6), RelativeWaypoint(0.3, 1.0, -0.2), 0, 0)
    assert gradient_check(m, s) < 1e-4


def test_checkpoint_round_trip():
    m = Regressor.init(12, 8, seed=2)
    back = Regressor.from_json(m.to_json())
    assert back.dims == m.dims
    assert all(np.array_equal(p, q) for p, q in zip(back.params(), m.params()))
    with pytest.raises(ValueError):
        Regressor.from_json(m.to_json().replace('"version": 1', '"version": 99'))
