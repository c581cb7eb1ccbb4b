import numpy as np
import pytest

from langevin_anneal.potentials import (AssumptionError, CustomPotential, DegenerateMinimumSpec,
                                        ParameterError, catalog_get, check_assumptions, probe_points)


def test_quadratic1d_values():
    p = catalog_get("quadratic1d", c=1.0)
    assert p.value(0.0) == 1.0
    assert p.value(2.0) == 5.0
    (m,) = p.minima
    assert m.positive_definite
    np.testing.assert_allclose(m.location, [0.0])
    np.testing.assert_allclose(m.hessian, [[2.0]])


def test_quartic_is_degenerate_with_exponent_quarter():
    p = catalog_get("quartic_degenerate_1d")
    (m,) = p.minima
    assert not m.positive_definite
    assert isinstance(m.degenerate, DegenerateMinimumSpec)
    assert m.degenerate.order_2p == 4
    assert m.degenerate.exponents == (0.25,)
    assert m.degenerate.alpha_min == 0.25
    assert m.degenerate.integrable(kappa=0.5)
    assert m.degenerate.integrable(kappa=3.0)


def test_double_well_minima_and_curvatures():
    p = catalog_get("double_well_1d", h1=2.0, h2=8.0)
    assert len(p.minima) == 2
    locs = sorted(float(m.location[0]) for m in p.minima)
    np.testing.assert_allclose(locs, [-1.0, 1.0], atol=1e-12)
    for x, h in ((-1.0, 2.0), (1.0, 8.0)):
        assert abs(p.gradient(x)[0]) < 1e-10
        assert p.hessian(x)[0, 0] == pytest.approx(h, rel=1e-12)
        # the minima are spline knots (third derivative jumps), so the
        # central difference is only first-order accurate there
        np.testing.assert_allclose(p.hessian_fd(x)[0, 0], h, rtol=1e-3)
    assert p.value(-1.0) == pytest.approx(p.value(1.0), abs=1e-12)


def test_double_well_is_c2_at_knots():
    p = catalog_get("double_well_1d", h1=2.0, h2=8.0)
    xs = np.linspace(-3, 3, 60001)[:, None]
    H = p.hessian(xs)[:, 0, 0]
    # no jumps in the second derivative larger than the grid can explain
    assert np.max(np.abs(np.diff(H))) < 0.01


def test_global_local_geometry():
    p = catalog_get("global_local_1d")
    assert len(p.minima) == 1 and len(p.local_minima) == 1
    g = float(p.minima[0].location[0])
    loc = float(p.local_minima[0].location[0])
    assert g > 0 > loc
    assert p.local_minima[0].value > p.v_star
    assert p.barrier() > 0


def test_unknown_name_and_bad_params():
    with pytest.raises(ParameterError):
        catalog_get("nope")
    with pytest.raises(ParameterError):
        catalog_get("double_well_1d", h1=-1.0)
    with pytest.raises(ParameterError):
        catalog_get("quadratic1d", c=0.0)
    with pytest.raises(ParameterError):
        catalog_get("quadratic1d", wrong=1.0)


def test_gradient_matches_finite_differences(catalog_potential):
    p = catalog_potential
    X = probe_points(np.tile([-2.0, 2.0], (p.dim, 1)), 100, seed=3)
    g = p.gradient(X)
    fd = p.gradient_fd(X)
    scale = np.maximum(np.abs(g), 1e-3)
    assert np.max(np.abs(g - fd) / scale) < 1e-5


def test_hessian_matches_finite_differences(catalog_potential):
    p = catalog_potential
    X = probe_points(np.tile([-2.0, 2.0], (p.dim, 1)), 50, seed=4)
    H = p.hessian(X)
    fd = p.hessian_fd(X)
    scale = np.maximum(np.abs(H), 1e-2)
    assert np.max(np.abs(H - fd) / scale) < 1e-4
    np.testing.assert_allclose(H, np.swapaxes(H, 1, 2), atol=1e-12)


def test_declared_minima_are_critical(catalog_potential):
    p = catalog_potential
    for m in p.minima:
        assert np.linalg.norm(p.gradient(np.atleast_1d(m.location))) <= 1e-8
        assert abs(p.value(np.atleast_1d(m.location)) - p.v_star) <= 1e-12
        assert p.v_star > 0


def test_sigmoid_regression_coercive():
    p = catalog_get("sigmoid_regression", M=32, lam=0.5, seed=1, dim=3)
    rng = np.random.default_rng(0)
    th = rng.normal(size=(200, 3))
    th = 1e3 * th / np.linalg.norm(th, axis=1, keepdims=True) * rng.uniform(1, 5, size=(200, 1))
    ratio = p.value(th) / np.sum(th**2, axis=1)
    assert np.all(ratio >= 0.5 / 2 - 1e-9)


def test_check_assumptions_quadratic():
    p = catalog_get("quadratic1d")
    r = check_assumptions(p, (-10, 10), A=2.0)
    assert r.R0 == 0.0
    assert r.alpha0 == pytest.approx(2.0, rel=1e-9)
    assert r.integrable
    assert r.grad_ratio_sup <= 4.0 + 1e-12  # 4x^2 / (x^2 + 1)


def test_check_assumptions_double_well_needs_compact():
    p = catalog_get("double_well_1d")
    r = check_assumptions(p, (-5, 5), A=1.0)
    assert r.R0 is not None and r.R0 > 1.0
    assert r.alpha0 > 0


def test_check_assumptions_rejects_nonpositive_v():
    p = CustomPotential(lambda X: -X[:, 0] ** 2, lambda X: -2 * X, dim=1)
    with pytest.raises(AssumptionError, match="non-positive"):
        check_assumptions(p, (-1, 1), A=1.0)


def test_check_assumptions_resolution_floor():
    with pytest.raises(ParameterError):
        check_assumptions(catalog_get("quadratic1d"), (-1, 1), A=1.0, resolution=5)
