import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import binary_linear
from robeval.errors import InputError
from robeval.fab import FabConfig, box_hyperplane_projection, fab_t_multi, fab_t_run, target_classes
from robeval.nn import mlp
from robeval.threat import ThreatModel, distance


def test_projection_hand_examples():
    x = np.array([[0.5, 0.5]])
    np.testing.assert_allclose(box_hyperplane_projection(x, [[1.0, 0.0]], -0.3, "L2"), [[0.3, 0.5]])
    np.testing.assert_allclose(box_hyperplane_projection(x, [[1.0, 1.0]], -0.6, "Linf"), [[0.3, 0.3]])
    # the l2 step clamps the first coordinate at 0 and finishes with the second
    np.testing.assert_allclose(box_hyperplane_projection([[0.1, 0.5]], [[1.0, 1.0]], -0.3, "L2"), [[0.0, 0.3]])


def test_projection_keeps_satisfied_points_and_handles_infeasible():
    x = np.array([[0.2, 0.7]])
    np.testing.assert_array_equal(box_hyperplane_projection(x, [[1.0, -1.0]], 0.0, "L2"), x)
    # w.z + b > 0 everywhere on the box: return the box minimiser
    np.testing.assert_array_equal(box_hyperplane_projection(x, [[1.0, -1.0]], 5.0, "Linf"), [[0.0, 1.0]])
    np.testing.assert_array_equal(box_hyperplane_projection(x, [[0.0, 0.0]], 1.0, "L2"), x)
    with pytest.raises(InputError):
        box_hyperplane_projection(x, [[1.0]], 0.0, "L2")


@settings(max_examples=300, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 8), st.sampled_from(["L2", "Linf"]))
def test_projection_beats_random_feasible_points(seed, d, norm):
    r = np.random.default_rng(seed)
    x = r.uniform(size=(1, d))
    w = r.normal(size=(1, d))
    w[r.uniform(size=(1, d)) < 0.2] = 0.0
    b = r.normal() * 0.5
    z = box_hyperplane_projection(x, w, b, norm)
    assert np.all((z >= 0) & (z <= 1))
    lowest = b + np.sum(np.where(w > 0, 0.0, w))
    if lowest > 0:
        return
    assert (w @ z.T).item() + b <= 1e-9
    cand = r.uniform(size=(2000, d))
    ok = cand @ w[0] + b <= 0
    if ok.any():
        assert distance(x, z, norm)[0] <= distance(np.repeat(x, ok.sum(), 0), cand[ok], norm).min() + 1e-12


def test_config_validation():
    for kwargs in ({"eta": 0.9}, {"beta": 1.0}, {"alpha_max": 2.0}, {"n_iter": 0}):
        with pytest.raises(InputError):
            FabConfig(**kwargs)


@pytest.mark.parametrize("norm", ["Linf", "L2"])
def test_linear_minimal_norm_close_to_closed_form(norm):
    r = np.random.default_rng(5)
    for _ in range(30):
        d = int(r.integers(2, 10))
        w = r.normal(size=d)
        x = r.uniform(0.35, 0.65, size=d)
        dual = np.abs(w).sum() if norm == "Linf" else np.linalg.norm(w)
        radius = r.uniform(0.02, 0.2)
        bias = radius * dual - w @ x
        out = fab_t_run(binary_linear(w, bias), x[None], [0], 1, ThreatModel(norm, 0.5), FabConfig(n_iter=20))
        assert out.success[0]
        assert out.f_best[0] == pytest.approx(radius, rel=0.01)
        assert out.f_best[0] >= radius * (1 - 1e-9)


def test_budget_decides_success():
    w = np.array([1.0, -2.0, 0.5])
    x = np.full(3, 0.5)
    bias = 0.1 * np.abs(w).sum() - w @ x
    model = binary_linear(w, bias)
    assert fab_t_run(model, x[None], [0], 1, ThreatModel("Linf", 0.2)).success[0]
    small = fab_t_run(model, x[None], [0], 1, ThreatModel("Linf", 0.05))
    assert not small.success[0] and np.isfinite(small.f_best[0])


def test_trace_best_is_non_increasing():
    net = mlp(16, 4, hidden=(8,), seed=2)
    x = np.random.default_rng(0).uniform(size=(6, 16))
    y = net.predict(x)
    t = target_classes(net.forward(x), y, 1)[:, 0]
    trace = []
    out = fab_t_run(net, x, y, t, ThreatModel("L2", 1.0), FabConfig(n_iter=30), trace=trace)
    bests = np.array([s["best"] for s in trace])
    assert np.all(bests[1:] <= bests[:-1])
    found = np.isfinite(out.f_best)
    assert found.any()
    np.testing.assert_array_equal(net.predict(out.x_adv[found]), t[found])
    assert all(np.all((t["x"] >= 0) & (t["x"] <= 1)) for t in trace)


def test_input_checks():
    net = mlp(4, 3, hidden=(4,), seed=0)
    x = np.full((1, 4), 0.5)
    y = net.predict(x)
    with pytest.raises(InputError):
        fab_t_run(net, x, y, y, ThreatModel("Linf", 0.1))
    with pytest.raises(InputError):
        fab_t_run(net, x, (y + 1) % 3, y, ThreatModel("Linf", 0.1))


def test_target_classes_rank_by_logit():
    z = np.array([[0.1, 3.0, 2.0, -1.0], [5.0, 1.0, 4.0, 0.0]])
    np.testing.assert_array_equal(target_classes(z, [1, 0], 2), [[2, 0], [2, 1]])
    assert target_classes(z, [1, 0], 9).shape == (2, 3)


def test_multi_target_keeps_smallest_norm():
    net = mlp(16, 4, hidden=(8,), seed=2)
    x = np.random.default_rng(1).uniform(size=(8, 16))
    y = net.predict(x)
    tm = ThreatModel("L2", 2.0)
    cfg = FabConfig(n_iter=25, n_targets=3)
    multi = fab_t_multi(net, x, y, tm, cfg)
    targets = target_classes(net.forward(x), y, 3)
    single = [fab_t_run(net, x, y, targets[:, j], tm, cfg).f_best for j in range(3)]
    np.testing.assert_array_equal(multi.f_best, np.min(single, axis=0))
    ok = multi.success
    assert np.all(net.predict(multi.x_adv[ok]) != y[ok])
    assert np.all(distance(x[ok], multi.x_adv[ok], "L2") <= 2.0)
