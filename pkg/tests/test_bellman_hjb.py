import numpy as np
import pytest
from conftest import make, sat_terminal
from hypothesis import given, settings
from hypothesis import strategies as st

import setvalued_hjb.bellman_hjb as bh
from setvalued_hjb import (
    Arc,
    DiscountSpec,
    HypothesisError,
    LagrangianSpec,
    TerminalSpec,
    UpperSet,
    arc_position,
    bellman_rhs,
    check_bellman,
    check_hjb,
    discount_gap_cost,
    fenchel_conjugate,
    grad_u,
    hjb_source,
    includes,
    random_arcs,
    solve_p,
    ut_scalar,
    value_function,
)
from setvalued_hjb.hopflax import vector_cost
from setvalued_hjb.quadrature import composite_rule

# -- W(t, τ, η) ------------------------------------------------------------------


def test_gap_cost_examples(sat, std0):
    arc = random_arcs(sat, 0.3, [0.2], 1, seed=1)[0]
    np.testing.assert_array_equal(discount_gap_cost(sat, 0.3, 0.3, arc), [0.0, 0.0])
    tail = arc.restricted(sat, 0.6)
    np.testing.assert_allclose(discount_gap_cost(std0, 0.3, 0.6, tail), 0.0, atol=0)
    end = Arc.piecewise_linear([1.0, 2.0], [[0.7], [0.7]])
    ref = (sat.discount.value(0.3, 1.0) - 1.0) * sat.terminal.value(np.array([0.7]))
    np.testing.assert_allclose(discount_gap_cost(sat, 0.3, 1.0, end), ref, rtol=1e-15)


def test_gap_cost_matches_quadrature(sat):
    from scipy.integrate import quad

    arc = random_arcs(sat, 0.4, [0.0], 1, seed=9)[0].restricted(sat, 0.4)
    W = discount_gap_cost(sat, 0.1, 0.4, arc)
    d = sat.discount
    ref = np.zeros(2)
    for (a, b), v in zip(zip(arc.times[:-1], arc.times[1:]), arc.segment_velocities):
        ref += quad(lambda s: float(d.value(0.1, s) - d.value(0.4, s)), a, b, epsabs=1e-14)[0] * sat.lagrangian.value(v)
    ref += (d.value(0.1, 1.0) - d.value(0.4, 1.0)) * sat.terminal.value(arc.nodes[-1])
    np.testing.assert_allclose(W, ref, atol=1e-12)


# -- Bellman right-hand side -----------------------------------------------------------


def test_rhs_at_horizon_is_arc_cost(sat):
    scn = sat.with_k_grid(9)
    for arc in random_arcs(scn, 0.0, [0.1], 5, seed=4):
        rhs = bellman_rhs(scn, 0.0, [0.1], arc, 1.0)
        np.testing.assert_allclose(rhs.thresholds, scn.cone.base_grid @ vector_cost(scn, arc), atol=1e-12)


def test_rhs_at_start_is_value(sat):
    scn = sat.with_k_grid(9)
    arc = random_arcs(scn, 0.2, [0.1], 1, seed=4)[0]
    rhs = bellman_rhs(scn, 0.2, [0.1], arc, 0.2)
    U = value_function(scn, 0.2, [0.1])
    np.testing.assert_allclose(rhs.thresholds, U.thresholds, atol=1e-12)


@pytest.mark.parametrize("disc", [DiscountSpec.constant_rate(0.2), DiscountSpec.hyperbolic(0.8)])
def test_optimal_arc_has_zero_slack(disc):
    scn = make(disc, sat_terminal(), k_grid=9)
    t, x = 0.1, np.array([0.3])
    U = value_function(scn, t, x)
    for k in (0, 4, 8):
        arc = Arc.analytic(t, x, solve_p(scn, t, x, k).p_star, scn.cone.zeta(k))
        for tau in (0.25, 0.5, 0.75):
            rhs = bellman_rhs(scn, t, x, arc, tau)
            assert rhs.thresholds[k] - U.thresholds[k] == pytest.approx(0.0, abs=1e-10)
            assert includes(U, rhs, 1e-10)


def test_check_bellman_small(sat):
    scn = sat.with_k_grid(9)
    arcs = random_arcs(scn, 0.0, [0.0], 15, seed=7)
    rep = check_bellman(scn, 0.0, [0.0], arcs, [0.25, 0.5, 0.75, 1.0])
    assert rep.min_slack >= -1e-6
    assert rep.infimizer_gap <= 1e-4
    assert rep.passed
    # at τ = T the slack is the gap between an arc's cost and the value
    assert np.all(rep.slack[:, -1, :] >= -1e-12)


def test_random_arcs_deterministic(sat):
    a = random_arcs(sat, 0.0, [0.0], 5, seed=(3, 1))
    b = random_arcs(sat, 0.0, [0.0], 5, seed=(3, 1))
    for u, v in zip(a, b):
        np.testing.assert_array_equal(u.nodes, v.nodes)
        assert u.times[0] == 0.0 and u.times[-1] == 1.0


# -- Fenchel conjugate -------------------------------------------------------------------


def test_conjugate_examples(std, std0):
    for k in (0, 7, 20):
        zeta = std.cone.zeta(k)
        d = std.discount.value(0.2, 0.6)
        p = std.lagrangian.grad(zeta, np.zeros(1)) * d
        h = fenchel_conjugate(std, 0.2, 0.6, p, k)
        assert h.threshold == pytest.approx(-d * std.lagrangian.scalar(zeta, np.zeros(1)), abs=1e-15)
    for p in (-2.0, 0.0, 0.7):
        assert fenchel_conjugate(std0, 0.3, 0.3, [p], 0).threshold == pytest.approx(0.5 * p * p, abs=1e-15)


@pytest.mark.parametrize("name", ["linear-exp", "sat-exp-quartic"])
def test_conjugate_grid_oracle(scenarios, name):
    scn = scenarios[name]
    w = np.arange(-10.0, 10.0 + 5e-4, 1e-3)[:, None]
    rng = np.random.default_rng(21)
    for _ in range(10):
        k = int(rng.integers(scn.cone.K))
        t, s = np.sort(rng.uniform(0, 1, 2))
        p = rng.uniform(-3, 3, 1)
        zeta = scn.cone.zeta(k)
        brute = np.max(w @ p - scn.discount.value(t, s) * scn.lagrangian.scalar(zeta, w))
        assert fenchel_conjugate(scn, t, s, p, k).threshold == pytest.approx(brute, abs=1e-5)


@settings(max_examples=200, deadline=None)
@given(
    st.integers(0, 8),
    st.floats(0, 1),
    st.floats(0, 1),
    st.floats(-20, 20),
    st.floats(-50, 50),
)
def test_conjugate_dominates(k, a, b, p, w):
    scn = _QUARTIC
    t, s = min(a, b), max(a, b)
    zeta = scn.cone.zeta(k)
    h = fenchel_conjugate(scn, t, s, [p], k)
    val = p * w - scn.discount.value(t, s) * scn.lagrangian.scalar(zeta, np.array([w]))
    assert h.threshold >= val - 1e-12 * max(1.0, abs(val))


_QUARTIC = make(
    DiscountSpec.hyperbolic(0.5),
    lagrangian=LagrangianSpec.quartic_reg([[[1.0]], [[2.0]]], a=[[0.0], [1.0]], eps=[0.1, 0.05]),
    k_grid=9,
)


# -- derivatives ---------------------------------------------------------------------

H = 1e-6


def _rel(a, b):
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b)) / np.maximum(1.0, np.abs(b))))


def _probes(scn, count, seed):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        t = rng.uniform(0.01, 0.8)
        yield (
            t,
            rng.uniform(-1, 1, scn.n),
            rng.uniform(-2, 2, scn.n),
            int(rng.integers(scn.cone.K)),
            rng.uniform(t + 0.05, scn.T),
        )


@pytest.mark.parametrize("name", ["sat-hyp", "sat-exp-quartic"])
def test_arc_derivatives_fd(scenarios, name):
    scn = scenarios[name]
    for t, x, p, k, s in _probes(scn, 10, 5):
        fd = (arc_position(scn, t + H, x, p, k, s) - arc_position(scn, t - H, x, p, k, s)) / (2 * H)
        assert _rel(bh.dY_dt(scn, t, x, p, k, s), fd) <= 1e-5
        fd = (scn_vel(scn, t + H, p, k, s) - scn_vel(scn, t - H, p, k, s)) / (2 * H)
        assert _rel(bh.dYdot_dt(scn, t, p, k, s), fd) <= 1e-5
        fd = (arc_position(scn, t, x + H, p, k, s) - arc_position(scn, t, x - H, p, k, s)) / (2 * H)
        assert _rel(bh.grad_x_Y(scn, t, x, p, k, s)[:, 0], fd) <= 1e-5
        assert np.all(bh.grad_x_Ydot(scn, t, x, p, k, s) == 0)
        fd = (arc_position(scn, t, x, p + H, k, s) - arc_position(scn, t, x, p - H, k, s)) / (2 * H)
        assert _rel(bh.grad_p_Y(scn, t, p, k, s)[:, 0], fd) <= 1e-5
        fd = (scn_vel(scn, t, p + H, k, s) - scn_vel(scn, t, p - H, k, s)) / (2 * H)
        assert _rel(bh.grad_p_Ydot(scn, t, p, k, s)[:, 0], fd) <= 1e-5


def scn_vel(scn, t, p, k, s):
    from setvalued_hjb import arc_velocity

    return arc_velocity(scn, t, p, k, s)


@pytest.mark.parametrize("name", ["sat-hyp", "sat-exp-quartic"])
def test_costate_derivatives_fd(scenarios, name):
    scn = scenarios[name]
    for t, x, _, k, _ in _probes(scn, 8, 6):
        fd = (solve_p(scn, t + H, x, k).p_star - solve_p(scn, t - H, x, k).p_star) / (2 * H)
        assert _rel(bh.dp_dt(scn, t, x, k), fd) <= 1e-5
        fd = (solve_p(scn, t, x + H, k).p_star - solve_p(scn, t, x - H, k).p_star) / (2 * H)
        assert _rel(bh.dp_dx(scn, t, x, k)[:, 0], fd) <= 1e-5


@pytest.mark.parametrize("name", ["linear-exp", "sat-hyp", "sat-exp-quartic"])
def test_value_derivatives_fd(scenarios, name):
    scn = scenarios[name]
    for t, x, _, k, _ in _probes(scn, 8, 7):
        vt = lambda tt, xx: bh.value_threshold(scn, tt, xx, k)  # noqa: E731
        fd = (vt(t + H, x) - vt(t - H, x)) / (2 * H)
        assert _rel(ut_scalar(scn, t, x, k), fd) <= 1e-5
        fd = (vt(t, x + H) - vt(t, x - H)) / (2 * H)
        assert _rel(grad_u(scn, t, x, k)[0], fd) <= 1e-5


def test_grad_u_linear_example(std):
    for t in (0.0, 0.4, 0.9):
        assert grad_u(std, t, [0.3], 0)[0] == pytest.approx(np.exp(-0.1 * (1 - t)), rel=1e-14)


def test_ut_undiscounted_formula():
    scn = make(DiscountSpec.constant_rate(0.0), sat_terminal(), k_grid=5)
    for k in range(5):
        zeta = scn.cone.zeta(k)
        res = solve_p(scn, 0.2, [0.1], k)
        w0 = scn.lagrangian.invert_grad(zeta, res.p_star)
        yT = arc_position(scn, 0.2, [0.1], res.p_star, k, 1.0)
        ref = -scn.lagrangian.scalar(zeta, w0) - scn.terminal.grad(zeta, yT) @ w0
        assert ut_scalar(scn, 0.2, [0.1], k, res) == pytest.approx(float(ref), abs=1e-14)
        np.testing.assert_array_equal(hjb_source(scn, 0.2, [0.1], k, res), [0.0, 0.0])


def test_source_constant_rate_factorizes():
    scn = make(DiscountSpec.constant_rate(0.3), sat_terminal(), k_grid=5)
    for k in range(5):
        res = solve_p(scn, 0.2, [0.1], k)
        arc = Arc.analytic(0.2, [0.1], res.p_star, scn.cone.zeta(k))
        np.testing.assert_allclose(hjb_source(scn, 0.2, [0.1], k, res), 0.3 * vector_cost(scn, arc), rtol=1e-13)


def test_source_hyperbolic_fd(sat):
    scn = sat.with_k_grid(9)
    t, x, h = 0.3, np.array([0.2]), 1e-6
    for k in (0, 4, 8):
        res = solve_p(scn, t, x, k)
        arc = Arc.analytic(t, x, res.p_star, scn.cone.zeta(k))
        nodes, weights = composite_rule(t, scn.T, 64)
        L = scn.lagrangian.value(arc.velocity(scn, nodes))
        gT = scn.terminal.value(arc.position(scn, scn.T))

        def cost_at(tau):
            return (weights * scn.discount.value(tau, nodes)) @ L + scn.discount.value(tau, scn.T) * gT

        fd = (cost_at(t + h) - cost_at(t - h)) / (2 * h)
        np.testing.assert_allclose(hjb_source(scn, t, x, k, res), fd, rtol=1e-7, atol=1e-8)


def test_derivative_sets_are_halfspaces(sat):
    zeta = sat.cone.zeta(5)
    ht = bh.time_derivative_set(sat, 0.2, [0.1], 5)
    hq = bh.direction_derivative_set(sat, 0.2, [0.1], [2.0], 5)
    np.testing.assert_array_equal(ht.zeta, zeta)
    assert ht.threshold == ut_scalar(sat, 0.2, [0.1], 5)
    assert hq.threshold == pytest.approx(2.0 * grad_u(sat, 0.2, [0.1], 5)[0], rel=1e-15)


def test_split_identity_converges(sat):
    t, x, q = 0.3, np.array([0.1]), np.array([0.7])
    for k in (0, 16, 32):
        target = ut_scalar(sat, t, x, k) + grad_u(sat, t, x, k) @ q
        errs = [abs(bh.difference_quotient(sat, t, x, k, h, q) - target) for h in (1e-3, 1e-4, 1e-5)]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] <= 1e-4


# -- HJB -----------------------------------------------------------------------------


def test_hjb_trivial_scenario():
    lag = LagrangianSpec.quadratic([[[1.0]], [[2.0]]], a=[[0.3], [-0.2]], b=[0.1, 0.0])
    scn = make(DiscountSpec.constant_rate(0.0), TerminalSpec.linear([[0.0], [0.0]]), lag, k_grid=9)
    rep = check_hjb(scn, [0.0, 0.5], [[0.0], [1.0]])
    assert rep.max_residual <= 1e-14
    for k, zeta in enumerate(scn.cone.base_grid):
        wstar = scn.lagrangian.invert_grad(zeta, np.zeros(1))
        assert rep.lhs[0, k] == pytest.approx(-scn.lagrangian.scalar(zeta, wstar), abs=1e-15)


@pytest.mark.parametrize("name,tol", [("linear-exp", 1e-6), ("sat-hyp", 1e-4), ("sat-exp-quartic", 1e-4)])
def test_hjb_small_grid(scenarios, name, tol):
    scn = scenarios[name]
    rep = check_hjb(scn, [0.0, 0.4, 0.8], [[-0.5], [0.0], [0.5]], tol=tol)
    assert rep.passed, (rep.max_residual, rep.max_fd_error)
    for s in rep.corollary_sets():
        assert includes(s, UpperSet.ordering_cone(scn.cone), tol)
        assert includes(UpperSet.ordering_cone(scn.cone), s, tol)


def test_hjb_requires_h4(scenarios):
    with pytest.raises(HypothesisError, match="h4"):
        check_hjb(scenarios["linear-var-quartic"], [0.0], [[0.0]])
