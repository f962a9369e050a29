import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from robeval.errors import InputError, UnsupportedLossError
from robeval.losses import LOSSES, loss_grad_logits, loss_value, margin
from robeval.nn import finite_difference_grad
from robeval.threat import ThreatModel, distance, is_feasible, project, random_init, step_direction

unit = st.floats(0.0, 1.0, allow_nan=False)


# threat geometry -----------------------------------------------------------


def test_project_examples():
    assert project(np.array([0.5]), np.array([0.75]), ThreatModel("Linf", 0.1))[0] == pytest.approx(0.6)
    assert project(np.array([0.05]), np.array([-0.2]), ThreatModel("Linf", 0.1))[0] == 0.0
    tm = ThreatModel("L2", 1.0, lower=-10, upper=10)
    np.testing.assert_allclose(project(np.zeros(2), np.array([3.0, 4.0]), tm), [0.6, 0.8], atol=1e-15)


def test_threat_model_validation():
    with pytest.raises(InputError):
        ThreatModel("L1", 0.1)
    with pytest.raises(InputError):
        ThreatModel("Linf", -0.1)
    with pytest.raises(InputError):
        ThreatModel("Linf", 0.1, lower=1.0, upper=0.0)
    assert ThreatModel("inf", 0.0).norm == "Linf"


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 6, elements=unit), arrays(np.float64, 6, elements=st.floats(-3, 3)),
       st.floats(1e-6, 1.5), st.sampled_from(["Linf", "L2"]))
def test_project_feasible_and_idempotent(x0, z, eps, norm):
    tm = ThreatModel(norm, eps)
    p = project(x0, z, tm)
    assert is_feasible(x0, p, tm)
    assert np.all((p >= 0) & (p <= 1))
    np.testing.assert_array_equal(project(x0, p, tm), p)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 5, elements=unit), arrays(np.float64, 5, elements=st.floats(-2, 2)), st.floats(1e-6, 1))
def test_linf_projection_is_nearest_point(x0, z, eps):
    tm = ThreatModel("Linf", eps)
    p = project(x0, z, tm)
    # brute force per coordinate over a fine grid of the feasible interval
    for i in range(5):
        lo, hi = max(0.0, x0[i] - eps), min(1.0, x0[i] + eps)
        grid = np.linspace(lo, hi, 2001)
        best = grid[np.argmin(np.abs(grid - z[i]))]
        assert abs(p[i] - z[i]) <= abs(best - z[i]) + 1e-12


@pytest.mark.parametrize("norm", ["Linf", "L2"])
def test_random_init_feasible_and_tiny_ball(norm, rng):
    x0 = rng.uniform(size=(50, 4))
    tm = ThreatModel(norm, 0.2)
    draws = random_init(x0, tm, rng)
    assert np.all(is_feasible(x0, draws, tm))
    np.testing.assert_array_equal(project(x0, draws, tm), draws)
    tiny = random_init(x0, ThreatModel(norm, 1e-12), rng)
    assert np.abs(tiny - x0).max() <= 1e-12
    per_row = random_init(x0[:3], tm, [np.random.default_rng(i) for i in range(3)])
    np.testing.assert_array_equal(per_row[1], random_init(x0[1:2], tm, [np.random.default_rng(1)])[0])


def test_random_init_linf_mean(rng):
    x0 = np.full(3, 0.5)
    tm = ThreatModel("Linf", 0.1)
    draws = np.stack([random_init(x0, tm, rng) for _ in range(10_000)])
    sigma = 0.1 / np.sqrt(3) / np.sqrt(10_000)
    assert np.all(np.abs(draws.mean(axis=0) - 0.5) <= 3 * sigma)


def test_step_direction():
    np.testing.assert_array_equal(step_direction(np.array([0.3, -0.2, 0.0]), "Linf"), [1, -1, 0])
    np.testing.assert_allclose(step_direction(np.array([3.0, 4.0]), "L2"), [0.6, 0.8])
    for norm in ("Linf", "L2"):
        assert np.all(step_direction(np.zeros(3), norm) == 0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, 7, elements=st.floats(-1e3, 1e3)))
def test_step_direction_norms(g):
    assert np.abs(step_direction(g, "Linf")).max() <= 1
    n = np.linalg.norm(step_direction(g, "L2"))
    assert n == 0 or abs(n - 1) <= 1e-12


def test_distance():
    x = np.zeros(2)
    assert distance(x, x, "Linf") == 0
    assert distance(x, np.array([0.1, -0.3]), "Linf") == pytest.approx(0.3)
    assert distance(x, np.array([3.0, 4.0]), "L2") == 5.0
    with pytest.raises(InputError):
        distance(x, np.zeros(3), "L2")


# losses --------------------------------------------------------------------


def test_loss_unit_values():
    assert loss_value("ce", np.zeros(10), 3) == pytest.approx(np.log(10), abs=1e-12)
    assert loss_value("cw", np.array([2.0, 5.0, 1.0]), 1) == -3.0
    assert loss_value("dlr", np.array([4.0, 2.0, 1.0, 0.0]), 0) == pytest.approx(-2 / 3, abs=1e-12)
    assert loss_value("dlr", np.array([1.0, 3.0, 0.0]), 0) == pytest.approx(2 / 3, abs=1e-12)
    assert loss_value("dlr-targeted", np.array([4.0, 2.0, 1.0, 0.0]), 0, 2) == pytest.approx(-6 / 7, abs=1e-12)


def test_loss_gradient_examples():
    g = loss_grad_logits("ce", np.zeros(4), 2)
    np.testing.assert_allclose(g, [0.25, 0.25, -0.75, 0.25])
    np.testing.assert_array_equal(loss_grad_logits("cw", np.array([2.0, 5.0, 1.0]), 1), [1, -1, 0])


def test_loss_errors():
    with pytest.raises(UnsupportedLossError):
        loss_value("dlr-targeted", np.zeros(3), 0, 1)
    with pytest.raises(UnsupportedLossError):
        loss_value("dlr", np.zeros(2), 0)
    with pytest.raises(InputError):
        loss_value("dlr-targeted", np.arange(5.0), 1, 1)
    with pytest.raises(InputError):
        loss_value("ce", np.zeros(3), 3)
    with pytest.raises(InputError):
        loss_value("hinge", np.zeros(3), 0)


def test_dlr_degenerate_denominator_is_finite():
    assert np.isfinite(loss_value("dlr", np.ones(5), 0))
    assert np.all(np.isfinite(loss_grad_logits("dlr", np.ones(5), 0)))


def test_ce_gradient_saturates_to_exact_zero():
    z = np.array([1000.0, 0.0, -5.0])
    assert np.all(loss_grad_logits("ce", z, 0) == 0)


logit_vectors = arrays(np.float64, 6, elements=st.floats(-20, 20, allow_nan=False), unique=True)


@settings(max_examples=300, deadline=None)
@given(logit_vectors, st.integers(0, 5), st.integers(0, 5), st.floats(-50, 50))
def test_losses_shift_invariant(z, y, t, c):
    for kind in LOSSES:
        if kind == "dlr-targeted" and t == y:
            continue
        a = loss_value(kind, z, y, t if kind == "dlr-targeted" else None)
        b = loss_value(kind, z + c, y, t if kind == "dlr-targeted" else None)
        assert abs(a - b) <= 1e-9 * max(1.0, abs(a))


@settings(max_examples=300, deadline=None)
@given(logit_vectors, st.integers(0, 5), st.integers(0, 5), st.floats(0.01, 100))
def test_loss_scale_behaviour(z, y, t, alpha):
    # the stabiliser in the DLR denominator breaks invariance when the gap is near zero
    top = np.sort(z)[::-1]
    assume(top[0] - top[2] > 1e-3 and top[0] - top[3] > 1e-3)
    assert abs(loss_value("dlr", alpha * z, y) - loss_value("dlr", z, y)) <= 1e-9
    if t != y:
        assert abs(loss_value("dlr-targeted", alpha * z, y, t) - loss_value("dlr-targeted", z, y, t)) <= 1e-9
    assert loss_value("cw", alpha * z, y) == pytest.approx(alpha * loss_value("cw", z, y), rel=1e-12, abs=1e-12)


def test_ce_not_scale_invariant():
    z = np.array([1.0, 0.3, -0.4])
    assert loss_value("ce", 3 * z, 0) != loss_value("ce", z, 0)


@settings(max_examples=300, deadline=None)
@given(logit_vectors, st.integers(0, 5))
def test_dlr_and_cw_sign_match_misclassification(z, y):
    wrong = np.argmax(z) != y
    assert (loss_value("dlr", z, y) > 0) == wrong
    assert (loss_value("cw", z, y) > 0) == wrong
    assert (margin(z, y)[0] < 0) == wrong
    if not wrong:
        assert -1 <= loss_value("dlr", z, y) <= 0


@pytest.mark.parametrize("kind", LOSSES)
def test_logit_gradients_match_finite_differences(kind, rng):
    for _ in range(30):
        z = rng.normal(size=(1, 6)) * 3
        y, t = rng.choice(6, 2, replace=False)
        target = t if kind == "dlr-targeted" else None
        g = loss_grad_logits(kind, z, y, target)
        fd = finite_difference_grad(lambda zz: loss_value(kind, zz, y, target), z, h=1e-6)
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=max(1e-6 * np.abs(fd).max(), 1e-12))
