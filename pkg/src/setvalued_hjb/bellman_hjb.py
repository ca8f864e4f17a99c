"""Bellman's optimality principle and the set-valued HJB equation.

Both statements are checked direction by direction on the base grid.  The
Bellman inclusion compares ``U(t, x)`` with the value obtained by following
an admissible arc up to ``tau`` and continuing optimally; the HJB check
compares the time derivative of the value with the set-valued Fenchel
conjugate of the running cost plus the source term produced by the
time-dependence of the discount.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .exceptions import UsageError
from .hopflax import (
    Arc,
    _newton_pieces,
    arc_position,
    grad_p_position,
    running_integral,
    solve_p,
    value_function,
    vector_cost,
)
from .lattice import HalfSpace, UpperSet, lattice_inf, linear_set, minkowski_sum_closed
from .quadrature import DEFAULT_PANELS, composite_rule

# ----------------------------------------------------------------------------
# Bellman
# ----------------------------------------------------------------------------


def discount_gap_cost(scn, t, tau, arc, panels=DEFAULT_PANELS):
    """``W(t,τ,η) = ∫_τ^T (d_t - d_τ) L(η̇) ds + (d_t(T) - d_τ(T)) g(η(T))``."""
    if not 0.0 <= t <= tau <= scn.T:
        raise UsageError("discount_gap_cost needs 0 ≤ t ≤ τ ≤ T")
    T = scn.T
    if tau == t:
        return np.zeros(scn.d)
    run = running_integral(scn, arc, tau, T, kind="gap", anchor=t, tau=tau, panels=panels)
    gap_T = scn.discount.value(t, T) - scn.discount.value(tau, T)
    return run + gap_T * scn.terminal.value(arc.position(scn, T, panels))


def continuation_candidates(scn, tau, y_tau, own_tail=None, velocity_grid=None, panels=DEFAULT_PANELS):
    """Arcs in ``A(τ, y(τ))`` over which the inner infimum is taken.

    The optimal candidate arc of the ``τ``-problem for every base direction,
    straight lines with velocities on ``velocity_grid`` (one axis per state
    dimension), and ``own_tail`` when given.
    """
    y_tau = np.atleast_1d(np.asarray(y_tau, dtype=float))
    cands = []
    if tau < scn.T:
        for j, zeta in enumerate(scn.cone.base_grid):
            res = solve_p(scn, tau, y_tau, j, panels=panels)
            cands.append(Arc.analytic(tau, y_tau, res.p_star, zeta))
        if velocity_grid is None:
            velocity_grid = np.linspace(-2.0, 2.0, 9)
        for v in itertools.product(velocity_grid, repeat=scn.n):
            v = np.asarray(v, dtype=float)
            cands.append(Arc.piecewise_linear([tau, scn.T], [y_tau, y_tau + (scn.T - tau) * v]))
    else:
        cands.append(Arc.piecewise_linear([tau, tau + 1.0], [y_tau, y_tau]))
    if own_tail is not None:
        cands.append(own_tail)
    return cands


def _tail_vector(scn, t, tau, eta, panels):
    """``W(t,τ,η) + I_τ(η)``: the continuation cost discounted back to ``t``."""
    if tau == scn.T:
        return scn.discount.value(t, scn.T) * scn.terminal.value(eta.position(scn, tau, panels))
    return discount_gap_cost(scn, t, tau, eta, panels) + vector_cost(scn, eta, panels)


def bellman_rhs(scn, t, x, arc, tau, velocity_grid=None, include_own_tail=True, panels=DEFAULT_PANELS):
    """``∫_t^τ 𝓛_t(s, ẏ) ds ⊕ inf_η [W(t,τ,η) + J_τ(η)]`` as an upper set.

    The inner infimum runs over :func:`continuation_candidates`.
    """
    if not 0.0 <= t <= tau <= scn.T:
        raise UsageError("bellman_rhs needs 0 ≤ t ≤ τ ≤ T")
    Z = scn.cone.base_grid
    head = UpperSet(scn.cone, Z @ running_integral(scn, arc, t, tau, anchor=t, panels=panels))
    y_tau = arc.position(scn, tau, panels)
    own = arc.restricted(scn, tau, panels) if include_own_tail and tau < scn.T else None
    cands = continuation_candidates(scn, tau, y_tau, own, velocity_grid, panels)
    tails = [UpperSet(scn.cone, Z @ _tail_vector(scn, t, tau, eta, panels)) for eta in cands]
    return minkowski_sum_closed(head, lattice_inf(tails))


@dataclass
class BellmanReport:
    """Slack of the Bellman inclusion per ``(arc, τ, direction)``.

    ``slack = rhs - lhs``; the inclusion ``U ⊇ rhs`` holds iff every slack is
    nonnegative.
    """

    taus: np.ndarray
    lhs: np.ndarray  # (K,)
    rhs: np.ndarray  # (arcs, taus, K)
    infimizer_rhs: np.ndarray  # (taus, K)
    tol: float
    tol_infimizer: float

    @property
    def slack(self):
        return self.rhs - self.lhs

    @property
    def min_slack(self):
        return float(self.slack.min())

    @property
    def worst(self):
        """``(arc index, τ, direction)`` of the smallest slack."""
        i, j, k = np.unravel_index(np.argmin(self.slack), self.slack.shape)
        return int(i), float(self.taus[j]), int(k)

    @property
    def infimizer_gap(self):
        return float(np.max(np.abs(self.infimizer_rhs - self.lhs)))

    @property
    def inclusion_ok(self):
        return self.min_slack >= -self.tol

    @property
    def infimizer_ok(self):
        return self.infimizer_gap <= self.tol_infimizer

    @property
    def passed(self):
        return self.inclusion_ok and self.infimizer_ok


def random_arcs(scn, t, x, count, seed=0, max_nodes=9, speed=2.0):
    """Seeded piecewise-linear arcs in ``A(t, x)``."""
    rng = np.random.default_rng(seed)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    arcs = []
    for _ in range(count):
        m = int(rng.integers(2, max_nodes + 1))
        inner = np.sort(rng.uniform(t, scn.T, size=m - 2))
        times = np.concatenate(([t], inner, [scn.T]))
        times = np.unique(times)
        vel = rng.uniform(-speed, speed, size=(len(times) - 1, scn.n))
        nodes = np.vstack([x, x + np.cumsum(vel * np.diff(times)[:, None], axis=0)])
        arcs.append(Arc.piecewise_linear(times, nodes))
    return arcs


def check_bellman(scn, t, x, arcs, taus, tol=1e-6, tol_infimizer=1e-4, velocity_grid=None, panels=DEFAULT_PANELS):
    """Bellman inclusion for sampled arcs and infimizer equality for the optimal family."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    taus = np.asarray(taus, dtype=float)
    lhs = value_function(scn, t, x, panels).thresholds
    rhs = np.array(
        [[bellman_rhs(scn, t, x, y, tau, velocity_grid, panels=panels).thresholds for tau in taus] for y in arcs]
    )
    family = [Arc.analytic(t, x, solve_p(scn, t, x, k, panels=panels).p_star, z) for k, z in enumerate(scn.cone.base_grid)]
    inf_rhs = np.array(
        [
            lattice_inf(bellman_rhs(scn, t, x, y, tau, velocity_grid, panels=panels) for y in family).thresholds
            for tau in taus
        ]
    )
    return BellmanReport(taus, lhs, rhs.reshape(len(arcs), len(taus), -1), inf_rhs, tol, tol_infimizer)


# ----------------------------------------------------------------------------
# Conjugate and Hamiltonian
# ----------------------------------------------------------------------------


def hamiltonian_set(scn, t, s, w, p, k):
    """``𝓗_{t,ζ}(s,w,p) = S_(p,ζ)(w) -_ζ 𝓛_t(s,w)``: threshold ``p·w - d_t(s) L_ζ(w)``."""
    zeta = scn.cone.zeta(k)
    w = np.atleast_1d(np.asarray(w, dtype=float))
    lin = linear_set(p, zeta, w)
    return HalfSpace(zeta, lin.threshold - float(scn.discount.value(t, s)) * float(scn.lagrangian.scalar(zeta, w)))


def fenchel_conjugate(scn, t, s, p, k):
    """``𝓛_t*(s, p, ζ)``, attained at ``w* = (∇L_ζ)⁻¹(p / d_t(s))``."""
    zeta = scn.cone.zeta(k)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    w_star = scn.lagrangian.invert_grad(zeta, p / scn.discount.value(t, s))
    return hamiltonian_set(scn, t, s, w_star, p, zeta)


# ----------------------------------------------------------------------------
# Derivatives of the candidate arcs and of the costate
# ----------------------------------------------------------------------------


def _grad_inverse(scn, zeta, q):
    """``∇(∇L_ζ)⁻¹(q) = [∇²L_ζ((∇L_ζ)⁻¹(q))]⁻¹``."""
    return np.linalg.inv(scn.lagrangian.hess(zeta, scn.lagrangian.invert_grad(zeta, q)))


def dY_dt(scn, t, x, p, k, s, panels=DEFAULT_PANELS):
    """``∂Y_{t,x,p,ζ}(s)/∂t``."""
    zeta = scn.cone.zeta(k)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    out = -scn.lagrangian.invert_grad(zeta, p)
    if s == t:
        return out
    nodes, weights = composite_rule(t, s, panels)
    dts = scn.discount.value(t, nodes)
    ginv = _grad_inverse(scn, zeta, p[None, :] / dts[:, None])
    integrand = (scn.discount.dt(t, nodes) / dts**2)[:, None] * (ginv @ p)
    return out - weights @ integrand


def dYdot_dt(scn, t, p, k, s):
    """``∂Ẏ_{t,x,p,ζ}(s)/∂t``."""
    zeta = scn.cone.zeta(k)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    dts = float(scn.discount.value(t, s))
    return -float(scn.discount.dt(t, s)) * _grad_inverse(scn, zeta, p / dts) @ p / dts**2


def grad_x_Y(scn, t, x, p, k, s):
    """``∇_x Y(s) = I``: the arc is a translate of its start point."""
    return np.eye(scn.n)


def grad_x_Ydot(scn, t, x, p, k, s):
    """``∇_x Ẏ(s) = 0``."""
    return np.zeros((scn.n, scn.n))


def grad_p_Y(scn, t, p, k, s, panels=DEFAULT_PANELS):
    return grad_p_position(scn, t, p, k, s, panels)


def grad_p_Ydot(scn, t, p, k, s):
    """``∇_p Ẏ(s) = d_t(s)⁻¹ ∇(∇L_ζ)⁻¹(p / d_t(s))``."""
    zeta = scn.cone.zeta(k)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    dts = float(scn.discount.value(t, s))
    return _grad_inverse(scn, zeta, p / dts) / dts


def _solved(scn, t, x, k, result, panels):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if result is None:
        result = solve_p(scn, t, x, k, panels=panels)
    return x, result.p_star


def dp_dt(scn, t, x, k, result=None, panels=DEFAULT_PANELS):
    """``∂p(t,x,ζ)/∂t`` from the implicit function theorem on ``F = 0``."""
    zeta = scn.cone.zeta(k)
    x, p = _solved(scn, t, x, k, result, panels)
    yT, _, J = _newton_pieces(scn, t, x, p, zeta, panels)
    T = scn.T
    rhs = float(scn.discount.dt(t, T)) * scn.terminal.grad(zeta, yT)
    rhs = rhs + float(scn.discount.value(t, T)) * scn.terminal.hess(zeta, yT) @ dY_dt(scn, t, x, p, zeta, T, panels)
    return -np.linalg.solve(J, rhs)


def dp_dx(scn, t, x, k, result=None, panels=DEFAULT_PANELS):
    """``∂p(t,x,ζ)/∂x``; column ``j`` is the derivative along ``e_j``."""
    zeta = scn.cone.zeta(k)
    x, p = _solved(scn, t, x, k, result, panels)
    yT, _, J = _newton_pieces(scn, t, x, p, zeta, panels)
    rhs = float(scn.discount.value(t, scn.T)) * scn.terminal.hess(zeta, yT) @ grad_x_Y(scn, t, x, p, zeta, scn.T)
    return -np.linalg.solve(J, rhs)


# ----------------------------------------------------------------------------
# Value derivatives and the HJB equation
# ----------------------------------------------------------------------------


def value_threshold(scn, t, x, k, panels=DEFAULT_PANELS):
    """``inf {ζ·z : z ∈ U(t,x)}`` for one direction, without the full grid."""
    zeta = scn.cone.zeta(k)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if t == scn.T:
        return float(zeta @ scn.terminal.value(x))
    res = solve_p(scn, t, x, k, panels=panels)
    return float(vector_cost(scn, Arc.analytic(t, x, res.p_star, zeta), panels) @ zeta)


def grad_u(scn, t, x, k, result=None, panels=DEFAULT_PANELS):
    """``∇u_ζ(t,x) = d_t(T) ∇g_ζ(Y_{t,x,ζ}(T))``."""
    zeta = scn.cone.zeta(k)
    x, p = _solved(scn, t, x, k, result, panels)
    yT = arc_position(scn, t, x, p, zeta, scn.T, panels)
    return float(scn.discount.value(t, scn.T)) * scn.terminal.grad(zeta, yT)


def ut_scalar(scn, t, x, k, result=None, panels=DEFAULT_PANELS):
    """``u_{t,ζ}(t,x)``, the threshold of the time derivative ``U_{t,ζ}``."""
    zeta = scn.cone.zeta(k)
    x, p = _solved(scn, t, x, k, result, panels)
    arc = Arc.analytic(t, x, p, zeta)
    T = scn.T
    yT = arc.position(scn, T, panels)
    w0 = scn.lagrangian.invert_grad(zeta, p)
    value = -float(scn.lagrangian.scalar(zeta, w0))
    value += float(running_integral(scn, arc, t, T, kind="dt", panels=panels) @ zeta)
    value += float(scn.discount.dt(t, T)) * float(scn.terminal.scalar(zeta, yT))
    value -= float(scn.discount.value(t, T)) * float(scn.terminal.grad(zeta, yT) @ w0)
    return value


def time_derivative_set(scn, t, x, k, result=None, panels=DEFAULT_PANELS):
    """``U_{t,ζ}(t,x) = S_(u_{t,ζ}, ζ)(1)``."""
    return linear_set([ut_scalar(scn, t, x, k, result, panels)], scn.cone.zeta(k), [1.0])


def direction_derivative_set(scn, t, x, q, k, result=None, panels=DEFAULT_PANELS):
    """``U_{q,ζ}(t,x) = S_(∇u_ζ, ζ)(q)``."""
    return linear_set(grad_u(scn, t, x, k, result, panels), scn.cone.zeta(k), q)


def hjb_source(scn, t, x, k, result=None, panels=DEFAULT_PANELS):
    """``w(t,x,ζ) = ∫_t^T ∂_t d_t(s) L(Ẏ(s)) ds + ∂_t d_t(T) g(Y(T))``."""
    zeta = scn.cone.zeta(k)
    x, p = _solved(scn, t, x, k, result, panels)
    arc = Arc.analytic(t, x, p, zeta)
    T = scn.T
    run = running_integral(scn, arc, t, T, kind="dt", panels=panels)
    return run + float(scn.discount.dt(t, T)) * scn.terminal.value(arc.position(scn, T, panels))


def difference_quotient(scn, t, x, k, h, q=None, time=True, panels=DEFAULT_PANELS):
    """Threshold of ``[U(t+h, x+hq) -_ζ U(t,x)] / h``.

    ``time=False`` keeps ``t`` fixed and moves only along ``q``.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    q = np.zeros_like(x) if q is None else np.atleast_1d(np.asarray(q, dtype=float))
    t1 = t + h if time else t
    return (value_threshold(scn, t1, x + h * q, k, panels) - value_threshold(scn, t, x, k, panels)) / h


@dataclass
class HjbReport:
    """Per-point, per-direction residuals of the HJB equation.

    ``residual = u_{t,ζ} - (conjugate threshold + ζ·w)``, which is also the
    threshold of ``U_{t,ζ} -_ζ 𝓛_t*(t,-∇u_ζ,ζ) - w`` in direction ``ζ``; the
    corollary asks all of them to vanish, i.e. their intersection is ``C``.
    """

    points_t: np.ndarray
    points_x: np.ndarray
    zetas: np.ndarray
    lhs: np.ndarray  # (P, K)
    rhs: np.ndarray  # (P, K)
    fd_time_error: np.ndarray  # (P, K)
    fd_space_error: np.ndarray  # (P, K)
    tol: float
    fd_tol: float
    cone: object = field(repr=False, default=None)

    @property
    def residual(self):
        return self.lhs - self.rhs

    @property
    def max_residual(self):
        return float(np.max(np.abs(self.residual)))

    @property
    def worst(self):
        i, k = np.unravel_index(np.argmax(np.abs(self.residual)), self.residual.shape)
        return float(self.points_t[i]), self.points_x[i].tolist(), int(k)

    def corollary_sets(self):
        """``sup_ζ [...]`` at each point as an upper set; ``C`` when the equation holds."""
        return [UpperSet(self.cone, r) for r in self.residual]

    @property
    def corollary_max(self):
        return float(max(np.max(np.abs(s.thresholds)) for s in self.corollary_sets()))

    @property
    def max_fd_error(self):
        return float(max(np.max(self.fd_time_error), np.max(self.fd_space_error)))

    @property
    def passed(self):
        return self.max_residual <= self.tol and self.corollary_max <= self.tol and self.max_fd_error <= self.fd_tol


def check_hjb(scn, points_t, points_x, tol=1e-6, fd_h=1e-5, fd_tol=1e-4, panels=DEFAULT_PANELS):
    """Evaluate both sides of the HJB equation on every point and base direction."""
    scn.require("h4", "h5")
    points_t = np.asarray(points_t, dtype=float)
    points_x = np.asarray(points_x, dtype=float).reshape(len(points_t), scn.n)
    K = scn.cone.K
    P = len(points_t)
    lhs = np.empty((P, K))
    rhs = np.empty((P, K))
    fd_t = np.empty((P, K))
    fd_x = np.empty((P, K))
    q = np.zeros(scn.n)
    q[0] = 1.0
    for i, (t, x) in enumerate(zip(points_t, points_x)):
        for k, zeta in enumerate(scn.cone.base_grid):
            res = solve_p(scn, t, x, k, panels=panels)
            ut = ut_scalar(scn, t, x, k, res, panels)
            gu = grad_u(scn, t, x, k, res, panels)
            conj = fenchel_conjugate(scn, t, t, -gu, k)
            w = hjb_source(scn, t, x, k, res, panels)
            lhs[i, k] = ut
            rhs[i, k] = conj.threshold + float(zeta @ w)
            fd_t[i, k] = abs(difference_quotient(scn, t, x, k, fd_h, panels=panels) - ut)
            fd_x[i, k] = abs(difference_quotient(scn, t, x, k, fd_h, q, time=False, panels=panels) - gu @ q)
    return HjbReport(points_t, points_x, scn.cone.base_grid, lhs, rhs, fd_t, fd_x, tol, fd_tol, scn.cone)
