import numpy as np
import pytest
from conftest import make, quartic, sat_terminal

import setvalued_hjb.hopflax as hl
from setvalued_hjb import (
    Arc,
    ConeSpec,
    DiscountSpec,
    DomainError,
    HypothesisError,
    LagrangianSpec,
    Scenario,
    SolverError,
    TerminalSpec,
    UpperSet,
    arc_position,
    arc_velocity,
    cost_set,
    grad_L_zeta,
    includes,
    scalar_cost,
    solve_p,
    stationarity_F,
    stationarity_jacobian,
    value_function,
    value_surface,
)
from setvalued_hjb.bellman_hjb import random_arcs
from setvalued_hjb.exceptions import ConditioningError
from setvalued_hjb.oracle import pgrid_minimize

E1, E2 = np.exp(-0.1), np.exp(-0.2)


def closed_form_half(r=0.1):
    """Threshold in direction (½, ½) of the standard scenario at (0, 0)."""
    d1 = np.exp(-r)
    run = (1 / 8) * d1**2 * (np.exp(r) - 1) / r + (1 / 8) * (1 - d1) / r
    y1 = 0.5 - 0.5 * (1 - d1) / r
    return run + d1 * 0.5 * y1


# -- arcs -------------------------------------------------------------------------


def test_velocity_examples(std, std0):
    for s in np.linspace(0, 1, 11):
        assert arc_velocity(std0, 0.0, [0.7], 0, s)[0] == 0.7
        assert arc_velocity(std, 0.0, [-1.0], 0, s)[0] == pytest.approx(-np.exp(0.1 * s), rel=1e-15)


def test_velocity_inverse_identity(scenarios):
    scn = scenarios["sat-exp-quartic"]
    rng = np.random.default_rng(3)
    for _ in range(50):
        k = int(rng.integers(scn.cone.K))
        t, s = np.sort(rng.uniform(0, 1, 2))
        w0 = rng.uniform(-3, 3, 1)
        p = grad_L_zeta(scn, k, w0) * scn.discount.value(t, s)
        assert arc_velocity(scn, t, p, k, s) == pytest.approx(w0, rel=1e-10, abs=1e-10)


def test_position_examples(std, std0):
    x = np.array([0.3])
    assert np.array_equal(arc_position(std, 0.4, x, [2.0], 5, 0.4), x)
    assert arc_position(std0, 0.2, x, [1.5], 0, 0.9)[0] == pytest.approx(0.3 + 0.7 * 1.5, abs=1e-14)
    ref = 0.3 - (np.exp(0.1) - 1) / 0.1
    assert arc_position(std, 0.0, x, [-1.0], 0, 1.0)[0] == pytest.approx(ref, abs=1e-13)
    assert ref == pytest.approx(0.3 - 1.051709, abs=1e-6)


def test_position_hyperbolic_closed_form():
    scn = make(DiscountSpec.hyperbolic(0.5), k_grid=3)
    # ζ = (1, 0): Ẏ = p (1 + 0.5 (s - t)), so Y(s) = x + p ((s-t) + 0.25 (s-t)²)
    for t, s in [(0.0, 1.0), (0.3, 0.8)]:
        got = arc_position(scn, t, [0.1], [-0.6], 0, s)[0]
        assert got == pytest.approx(0.1 - 0.6 * ((s - t) + 0.25 * (s - t) ** 2), abs=1e-14)


def test_piecewise_linear_arc_validation():
    with pytest.raises(Exception):
        Arc.piecewise_linear([0.0, 0.5, 0.5, 1.0], [[0.0], [1.0], [1.0], [2.0]])


# -- costs ------------------------------------------------------------------------


def test_cost_closed_form_r0(std0):
    arc = Arc.analytic(0.0, [0.0], [-1.0], std0.cone.zeta(0))
    assert scalar_cost(std0, arc, 0) == pytest.approx(-0.5, abs=1e-14)


def test_cost_closed_form_r01(std):
    p = -E1
    arc = Arc.analytic(0.0, [0.0], [p], std.cone.zeta(0))
    assert scalar_cost(std, arc, 0) == pytest.approx(-5 * (E1 - E2), abs=1e-12)


def test_cost_zero_terminal_min_velocity():
    lag = LagrangianSpec.quadratic([[[1.0]], [[2.0]]], a=[[0.3], [-0.4]], b=[0.2, 0.5])
    scn = make(DiscountSpec.hyperbolic(0.7), TerminalSpec.linear([[0.0], [0.0]]), lag, k_grid=5)
    for k, zeta in enumerate(scn.cone.base_grid):
        w = scn.lagrangian.invert_grad(zeta, np.zeros(1))
        arc = Arc.piecewise_linear([0.2, 1.0], [[0.0], [0.8 * w[0]]])
        ref = scn.lagrangian.scalar(zeta, w) * scn.discount.integral(0.2, 0.2, 1.0)
        assert scalar_cost(scn, arc, k) == pytest.approx(ref, abs=1e-13)


def test_cost_set_membership(std, sat):
    for scn in (std, sat):
        for arc in random_arcs(scn, 0.1, [0.2], 10, seed=5):
            J = cost_set(scn, arc)
            point = hl.vector_cost(scn, arc)
            assert includes(J, UpperSet.from_point(scn.cone, point), 1e-12)
            assert J.contains(point, tol=1e-12)


def test_cost_set_zero_costs_is_cone():
    lag = LagrangianSpec.quadratic([[[1.0]], [[1.0]]])
    scn = make(terminal=TerminalSpec.linear([[0.0], [0.0]]), lagrangian=lag, k_grid=9)
    arc = Arc.piecewise_linear([0.0, 1.0], [[0.0], [0.0]])
    np.testing.assert_allclose(cost_set(scn, arc).thresholds, 0.0, atol=0)


def test_piecewise_linear_cost_matches_fine_quadrature(sat):
    arc = random_arcs(sat, 0.0, [0.1], 1, seed=11)[0]
    zeta = sat.cone.zeta(7)
    from scipy.integrate import quad

    total = 0.0
    for (a, b), v in zip(zip(arc.times[:-1], arc.times[1:]), arc.segment_velocities):
        total += quad(lambda s: float(sat.discount.value(0.0, s)), a, b, epsabs=1e-14)[0] * sat.lagrangian.scalar(zeta, v)
    total += sat.discount.value(0.0, 1.0) * sat.terminal.scalar(zeta, arc.nodes[-1])
    assert scalar_cost(sat, arc, 7) == pytest.approx(total, abs=1e-12)


# -- stationarity and Newton ---------------------------------------------------------


def test_linear_terminal_one_step(std):
    for k in range(std.cone.K):
        J = stationarity_jacobian(std, 0.0, [0.0], [0.3], k)
        np.testing.assert_allclose(J, np.eye(1), atol=0)
        res = solve_p(std, 0.0, [0.0], k)
        assert res.iterations == 1
        zeta = std.cone.zeta(k)
        assert res.p_star[0] == pytest.approx(-E1 * zeta[0], abs=1e-15)


def test_constant_terminal_zero_costate():
    scn = make(terminal=TerminalSpec.linear([[0.0], [0.0]], [1.0, 2.0]), k_grid=5)
    for k in range(5):
        res = solve_p(scn, 0.3, [0.5], k)
        assert res.p_star[0] == 0.0
        assert res.iterations == 1
        np.testing.assert_array_equal(stationarity_F(scn, 0.3, [0.5], [0.2], k), [0.2])


def test_pstar_closed_form(std):
    res = solve_p(std, 0.0, [0.0], 0)
    assert res.p_star[0] == pytest.approx(-E1, abs=1e-15)
    assert res.p_star[0] == pytest.approx(-0.904837, abs=1e-6)
    grid = pgrid_minimize(std, 0.0, [0.0], 0, -3.0, 3.0, 1e-4)
    assert abs(grid.p_best[0] - res.p_star[0]) <= 1e-4


@pytest.mark.parametrize("name", ["sat-hyp", "sat-exp-quartic"])
def test_jacobian_psd_and_local_min(scenarios, name):
    scn = scenarios[name]
    rng = np.random.default_rng(8)
    for _ in range(10):
        t = rng.uniform(0, 0.9)
        x = rng.uniform(-1, 1, 1)
        k = int(rng.integers(scn.cone.K))
        res = solve_p(scn, t, x, k)
        assert res.residual <= 1e-10 * (1 + np.linalg.norm(res.p_star))
        assert res.jacobian_min_eig >= 1 - 1e-8
        zeta = scn.cone.zeta(k)
        base = scalar_cost(scn, Arc.analytic(t, x, res.p_star, zeta), k)
        for dp in (1e-4, -1e-4):
            assert base <= scalar_cost(scn, Arc.analytic(t, x, res.p_star + dp, zeta), k)


def test_direction_scale_invariance(sat):
    zeta = sat.cone.zeta(11)
    t, x = 0.2, np.array([0.4])
    for lam in (2.0, 0.3, 17.0):
        r1 = solve_p(sat, t, x, zeta)
        r2 = solve_p(sat, t, x, lam * zeta)
        assert r2.p_star == pytest.approx(lam * r1.p_star, rel=1e-9)
        a1 = Arc.analytic(t, x, r1.p_star, zeta)
        a2 = Arc.analytic(t, x, r2.p_star, lam * zeta)
        for s in np.linspace(t, 1.0, 9):
            assert a2.position(sat, s) == pytest.approx(a1.position(sat, s), abs=1e-12)
        h1 = hl.cost_halfspace(sat, a1, zeta)
        h2 = hl.cost_halfspace(sat, a2, lam * zeta)
        assert h1.same_set(h2, 1e-10)


def test_undiscounted_arcs_are_straight():
    scn = make(DiscountSpec.constant_rate(0.0), sat_terminal(), quartic(), k_grid=5)
    for k in range(5):
        res = solve_p(scn, 0.1, [0.3], k)
        v = np.array([arc_velocity(scn, 0.1, res.p_star, k, s) for s in np.linspace(0.1, 1, 50)])
        assert np.max(np.abs(v - v[0])) < 1e-12


def test_solver_errors(sat, monkeypatch):
    with pytest.raises(DomainError):
        solve_p(sat, 1.0, [0.0], 0)
    with pytest.raises(SolverError) as err:
        solve_p(sat, 0.0, [2.0], 3, max_iter=1)
    assert len(err.value.trace) == 1
    monkeypatch.setattr(hl, "MAX_CONDITION", 0.5)
    with pytest.raises(ConditioningError):
        solve_p(sat, 0.0, [0.0], 3)


# -- value function -------------------------------------------------------------------


def test_standard_value_thresholds(std):
    U = value_function(std, 0.0, [0.0])
    assert U.thresholds[0] == pytest.approx(-5 * (E1 - E2), abs=1e-12)
    assert U.thresholds[16] == pytest.approx(closed_form_half(), abs=1e-12)
    assert U.thresholds[32] == pytest.approx(0.0, abs=1e-15)


def test_value_common_minimizer():
    lag = LagrangianSpec.quadratic([[[1.0]], [[3.0]]], a=[[0.3], [0.3]], b=[0.2, 0.5])
    scn = make(DiscountSpec.hyperbolic(0.4), TerminalSpec.linear([[0.0], [0.0]]), lag, k_grid=7)
    U = value_function(scn, 0.25, [1.0])
    ref = scn.cone.base_grid @ np.array([0.2, 0.5]) * scn.discount.integral(0.25, 0.25, 1.0)
    np.testing.assert_allclose(U.thresholds, ref, atol=1e-13)


def test_value_at_horizon(sat):
    U = value_function(sat, 1.0, [0.4])
    np.testing.assert_allclose(U.thresholds, sat.cone.base_grid @ sat.terminal.value(np.array([0.4])), atol=0)


def test_value_rejects_nonconvex_terminal():
    cone = ConeSpec.from_generators([[1.0, 0.0], [1.0, -0.5]], k_grid=5)
    lag = LagrangianSpec.quadratic([[[1.0]], [[1.0]]])
    term = TerminalSpec.build("CONVEX_QUAD_SAT", [[0.0], [0.0]], scale=[0.0, 2.0])
    scn = Scenario(cone, lag, term, DiscountSpec.constant_rate(0.1), 1.0)
    with pytest.raises(HypothesisError, match="h5"):
        value_function(scn, 0.0, [0.0])


@pytest.mark.parametrize("name", ["linear-exp", "sat-hyp", "sat-exp-quartic"])
def test_value_includes_sampled_costs(scenarios, name):
    scn = scenarios[name]
    t, x = 0.1, np.array([0.25])
    U = value_function(scn, t, x)
    for arc in random_arcs(scn, t, x, 100, seed=2024):
        assert includes(U, cost_set(scn, arc), 1e-9)


@pytest.mark.parametrize("name", ["linear-exp", "sat-exp-quartic", "linear-var-quartic"])
def test_conjugate_inequality_membership(scenarios, name):
    # ζ·[p·(Ẏ - w) ζ/|ζ|² - d_t(s)(L(Ẏ) - L(w))] ≥ 0
    scn = scenarios[name]
    rng = np.random.default_rng(33)
    for _ in range(500):
        k = int(rng.integers(scn.cone.K))
        zeta = scn.cone.zeta(k)
        t, s = np.sort(rng.uniform(0, 1, 2))
        p = rng.uniform(-5, 5, 1)
        w = rng.uniform(-5, 5, 1)
        ydot = arc_velocity(scn, t, p, k, s)
        d = scn.discount.value(t, s)
        vec = (p @ (ydot - w)) * zeta / (zeta @ zeta) - d * (scn.lagrangian.value(ydot) - scn.lagrangian.value(w))
        assert zeta @ vec >= -1e-10


@pytest.mark.parametrize("name", ["linear-exp", "sat-hyp"])
def test_pgrid_identity(scenarios, name):
    scn = scenarios[name]
    for k in (0, 4, 8):
        res = solve_p(scn, 0.0, [0.0], k)
        zeta = scn.cone.zeta(k)
        newton = scalar_cost(scn, Arc.analytic(0.0, [0.0], res.p_star, zeta), k)
        grid = pgrid_minimize(scn, 0.0, [0.0], k, -3.0, 3.0, 1e-3)
        assert abs(grid.p_best[0] - res.p_star[0]) <= 1e-3
        assert newton <= grid.cost + 1e-12
        assert grid.cost - newton <= 1e-6


@pytest.mark.parametrize("name", ["linear-exp", "sat-hyp", "sat-exp-quartic"])
def test_cost_coercive_in_p(scenarios, name):
    scn = scenarios[name]
    for k in range(scn.cone.K):
        zeta = scn.cone.zeta(k)
        for sign in (1.0, -1.0):
            vals = [scalar_cost(scn, Arc.analytic(0.2, [0.1], [sign * m], zeta), k) for m in (10.0, 1e2, 1e3)]
            assert np.all(np.diff(vals) > 0)


def test_surface_parallel_matches_serial(sat):
    pt, px = hl.grid_points([0.0, 0.5], [[-0.5, 0.5]])
    np.testing.assert_array_equal(pt, [0.0, 0.0, 0.5, 0.5])
    np.testing.assert_array_equal(px[:, 0], [-0.5, 0.5, -0.5, 0.5])
    scn = sat.with_k_grid(5)
    a = value_surface(scn, pt, px)
    b = value_surface(scn, pt, px, jobs=2)
    np.testing.assert_array_equal(a.thresholds, b.thresholds)
    np.testing.assert_array_equal(a.p_star, b.p_star)
    assert np.all(np.isfinite(a.thresholds))
