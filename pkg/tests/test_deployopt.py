import numpy as np
import pytest

from cellfree.bundle import build_scenario
from cellfree.deployopt import (BBGDOptions, OptState, bb_step, bbgd_optimize, kmeans_init,
                                mask_largest_gradient, save_trace_csv, step_bounds)
from cellfree.scenario import Layout, generate_layout

from conftest import small_config


def _state(pos, grad, prev_pos=None, prev_grad=None):
    return OptState(iteration=1, positions=np.asarray(pos, float), grad=np.asarray(grad, float),
                    prev_positions=None if prev_pos is None else np.asarray(prev_pos, float),
                    prev_grad=None if prev_grad is None else np.asarray(prev_grad, float))


def test_bounds_for_unit_gradients():
    ang = np.array([0.3, 1.9, -2.2])
    g = np.column_stack([np.cos(ang), np.sin(ang)])
    lo, hi = step_bounds(_state(np.zeros((3, 2)), g))
    assert lo == pytest.approx(20.0) and hi == pytest.approx(50.0)


def test_first_step_and_flat_gradient_fallback():
    g = np.array([[2.0, 0.0], [0.0, 1.0]])
    assert bb_step(_state(np.zeros((2, 2)), g)) == pytest.approx(25.0)
    same = _state(np.ones((2, 2)), g, np.zeros((2, 2)), g)
    assert bb_step(same) == pytest.approx(25.0)


def test_quadratic_bb_step_is_inverse_curvature():
    c = 0.04
    x0 = np.array([[40.0, 10.0]])
    x1 = np.array([[25.0, 12.0]])
    st = _state(x1, -c * x1, x0, -c * x0)
    assert bb_step(st) == pytest.approx(1 / c)
    # outside the bounds it is clamped
    x1_far = np.array([[200.0, 0.0]])
    st2 = _state(x1_far, -c * x1_far, x0, -c * x0)
    assert bb_step(st2) == pytest.approx(50.0 / (c * 200.0))


def test_bb_uses_only_unmasked_coordinates():
    c = 0.04
    x0 = np.array([[40.0, 10.0], [5.0, 5.0]])
    x1 = np.array([[25.0, 12.0], [500.0, -70.0]])
    g0, g1 = -c * x0, -c * x1
    g1[1] = [1e3, 1e3]  # wild gradient on an AP that is masked
    st = _state(x1, g1, x0, g0)
    st.masked.add(1)
    assert bb_step(st) == pytest.approx(1 / c)


def test_masking_order_and_exhaustion():
    st = _state(np.zeros((3, 2)), [[1.0, 0.0], [0.0, 3.0], [2.0, 0.0]])
    mask_largest_gradient(st)
    assert st.masked == {1} and not st.reason
    mask_largest_gradient(st)
    assert st.masked == {1, 2}
    mask_largest_gradient(st)
    assert st.reason == "all derivatives masked"
    np.testing.assert_array_equal(st.masked_grad(), 0.0)
    single = _state(np.zeros((1, 2)), [[1.0, 1.0]])
    assert mask_largest_gradient(single).reason


def test_kmeans_cases():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-100, 100, size=(6, 2))
    lay = kmeans_init(pts, 6, seed=1)
    assert sorted(map(tuple, np.round(lay.ap_positions, 9))) == sorted(map(tuple, np.round(pts, 9)))
    np.testing.assert_allclose(kmeans_init(pts, 1, seed=1).ap_positions[0], pts.mean(axis=0))
    blobs = np.vstack([rng.normal([-500, 0], 5, size=(20, 2)), rng.normal([500, 0], 5, size=(20, 2))])
    c = kmeans_init(blobs, 2, seed=3).ap_positions
    assert sorted(np.sign(c[:, 0])) == [-1, 1]
    np.testing.assert_array_equal(kmeans_init(blobs, 2, seed=3).ap_positions, c)
    with pytest.raises(ValueError):
        kmeans_init(pts[:2], 3, seed=0)


@pytest.fixture(scope="module")
def run():
    cfg = small_config(num_aps=4, num_users=10, antennas_per_ap=8, assoc_count=2, pilot_len=5)
    lay = generate_layout(cfg, 5)
    best, state = bbgd_optimize(cfg, lay, BBGDOptions(max_iter=12))
    return cfg, lay, best, state


def test_objective_strictly_increases(run):
    cfg, lay, best, state = run
    obj = np.array(state.objective)
    assert len(obj) >= 2 and np.all(np.diff(obj) > 0)
    assert state.iteration <= 12


def test_accepted_moves_within_max_clamp(run):
    _, _, _, state = run
    for prev, cur in zip(state.trace, state.trace[1:]):
        moves = np.linalg.norm(cur.positions - prev.positions, axis=1)
        assert moves.max() <= 50.0 + 1e-9


def test_best_layout_returned(run):
    cfg, _, best, state = run
    assert build_scenario(cfg, best).sum_rate() == pytest.approx(max(state.objective), rel=1e-12)
    np.testing.assert_array_equal(best.ap_positions, state.trace[-1].positions)


def test_rerun_reproduces_trace(run, tmp_path):
    cfg, lay, _, state = run
    _, again = bbgd_optimize(cfg, lay, BBGDOptions(max_iter=12))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    save_trace_csv(state, a)
    save_trace_csv(again, b)
    assert a.read_bytes() == b.read_bytes()
    header = a.read_text().splitlines()[0].split(",")
    assert header[:5] == ["iteration", "objective", "step", "backtracks", "masked"]


def test_fd_gradient_also_improves():
    cfg = small_config(num_aps=3, num_users=6, antennas_per_ap=4, assoc_count=2, pilot_len=6)
    lay = generate_layout(cfg, 2)
    _, state = bbgd_optimize(cfg, lay, BBGDOptions(max_iter=3, gradient="fd"))
    assert state.objective[-1] > state.objective[0]


def test_stationary_instance_stays_put():
    # with 32 antennas the ring centre is a local maximum of the sum rate
    cfg = small_config(num_aps=1, num_users=6, assoc_count=1, pilot_len=6, antennas_per_ap=32)
    ang = np.arange(6) * np.pi / 3
    ue = 120.0 * np.column_stack([np.cos(ang), np.sin(ang)])
    lay = Layout(np.zeros((1, 2)), ue)
    best, state = bbgd_optimize(cfg, lay, BBGDOptions(max_iter=10))
    assert state.iteration <= 2
    assert state.reason == "all derivatives masked"
    assert np.linalg.norm(best.ap_positions[0]) <= 20.0
