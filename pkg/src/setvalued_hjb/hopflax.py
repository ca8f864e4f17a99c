"""Candidate arcs, their costs, the costate solve and the Hopf-Lax value.

For every base direction ``ζ`` of the dual cone the infinite-dimensional
infimum over arcs collapses to a finite-dimensional one over the costate
``p ∈ R^n``: the arcs

    Y_{t,x,p,ζ}(s) = x + ∫_t^s (∇L_ζ)⁻¹(p / d_t(r)) dr

contain the scalarized minimizer, located by Newton's method on the
stationarity condition ``F(p) = p + d_t(T) ∇g_ζ(Y(T)) = 0``.  The value
``U(t, x)`` is the intersection of the resulting half-spaces.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConditioningError, DomainError, HypothesisError, SolverError, UsageError
from .lattice import HalfSpace, UpperSet
from .quadrature import DEFAULT_PANELS, composite_rule

NEWTON_TOL = 1e-10
NEWTON_MAXITER = 50
MAX_CONDITION = 1e12


# ----------------------------------------------------------------------------
# Arcs
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Arc:
    """An admissible arc anchored at ``y(t) = x``.

    ``kind == "ANALYTIC"`` is the candidate ``Y_{t,x,p,ζ}``; ``kind ==
    "PIECEWISE_LINEAR"`` interpolates ``nodes`` at ``times`` (strictly
    increasing, ``times[0] == t``).
    """

    kind: str
    t: float
    x: np.ndarray
    p: np.ndarray | None = None
    zeta: np.ndarray | None = None
    times: np.ndarray | None = None
    nodes: np.ndarray | None = None

    @classmethod
    def analytic(cls, t, x, p, zeta):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        p = np.atleast_1d(np.asarray(p, dtype=float))
        return cls("ANALYTIC", float(t), x, p=p, zeta=np.asarray(zeta, dtype=float))

    @classmethod
    def piecewise_linear(cls, times, nodes):
        times = np.asarray(times, dtype=float)
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        if times.ndim != 1 or len(times) < 2 or len(nodes) != len(times):
            raise UsageError("piecewise-linear arcs need ≥ 2 nodes with matching times")
        if np.any(np.diff(times) <= 0):
            raise UsageError("piecewise-linear node times must be strictly increasing")
        return cls("PIECEWISE_LINEAR", float(times[0]), nodes[0].copy(), times=times, nodes=nodes)

    @property
    def segment_velocities(self):
        return np.diff(self.nodes, axis=0) / np.diff(self.times)[:, None]

    def velocity(self, scn, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "ANALYTIC":
            return _analytic_velocity(scn, self.t, self.p, self.zeta, s)
        idx = np.clip(np.searchsorted(self.times, s, side="right") - 1, 0, len(self.times) - 2)
        return self.segment_velocities[idx]

    def position(self, scn, s, panels=DEFAULT_PANELS):
        if self.kind == "ANALYTIC":
            return arc_position(scn, self.t, self.x, self.p, self.zeta, s, panels)
        return np.stack([np.interp(s, self.times, self.nodes[:, i]) for i in range(self.nodes.shape[1])], axis=-1)

    def restricted(self, scn, tau, panels=DEFAULT_PANELS):
        """The same trajectory on ``[tau, T]``, re-anchored at ``y(tau)``."""
        if self.kind == "ANALYTIC":
            # p / d_t(r) = (p d_τ(r) / d_t(r)) / d_τ(r) is only an analytic arc
            # from tau when the discount is time consistent, so keep the
            # original anchor and evaluate through it.
            return _Restriction(self, float(tau), self.position(scn, tau, panels))
        keep = self.times > tau
        times = np.concatenate(([tau], self.times[keep]))
        nodes = np.vstack([self.position(scn, tau)[None, :], self.nodes[keep]])
        return Arc.piecewise_linear(times, nodes)


@dataclass(frozen=True, eq=False)
class _Restriction:
    """An analytic arc viewed on ``[tau, T]``; behaves like an :class:`Arc`."""

    parent: Arc
    t: float
    x: np.ndarray
    kind: str = field(default="RESTRICTED")

    def velocity(self, scn, s):
        return self.parent.velocity(scn, s)

    def position(self, scn, s, panels=DEFAULT_PANELS):
        return self.parent.position(scn, s, panels)


def _check_span(scn, t, s):
    if t < -1e-12 or np.any(np.asarray(s) > scn.T + 1e-12) or np.any(np.asarray(s) < t - 1e-12):
        raise DomainError(f"arc evaluation needs 0 ≤ t ≤ s ≤ T={scn.T}")


def _analytic_velocity(scn, t, p, zeta, s):
    dts = scn.discount.value(t, np.asarray(s, dtype=float))
    return scn.lagrangian.invert_grad(zeta, np.asarray(p, dtype=float) / np.asarray(dts)[..., None])


def arc_velocity(scn, t, p, k, s):
    """``Ẏ(s) = (∇L_ζ)⁻¹(p / d_t(s))``."""
    _check_span(scn, t, s)
    return _analytic_velocity(scn, t, np.atleast_1d(np.asarray(p, dtype=float)), scn.cone.zeta(k), s)


def arc_position(scn, t, x, p, k, s, panels=DEFAULT_PANELS):
    """``Y(s) = x + ∫_t^s Ẏ``, composite Gauss-Legendre with ``panels`` panels."""
    _check_span(scn, t, s)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    zeta = scn.cone.zeta(k)
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.empty(s_arr.shape + x.shape)
    for i, si in enumerate(s_arr.reshape(-1)):
        if si == t:
            out.reshape(-1, x.shape[0])[i] = x
            continue
        nodes, weights = composite_rule(t, si, panels)
        vel = _analytic_velocity(scn, t, p, zeta, nodes)
        out.reshape(-1, x.shape[0])[i] = x + weights @ vel
    return out[0] if np.ndim(s) == 0 else out


# ----------------------------------------------------------------------------
# Costs
# ----------------------------------------------------------------------------

_WEIGHTS = ("d", "gap", "dt")


def _weight_fn(scn, kind, t, tau):
    disc = scn.discount
    if kind == "d":
        return lambda s: disc.value(t, s)
    if kind == "gap":
        return lambda s: disc.value(t, s) - disc.value(tau, s)
    return lambda s: disc.dt(t, s)


def _weight_integral(scn, kind, t, tau, a, b):
    disc = scn.discount
    if kind == "d":
        return disc.integral(t, a, b)
    if kind == "gap":
        return disc.integral(t, a, b) - disc.integral(tau, a, b)
    return disc.dt_integral(t, a, b)


def running_integral(scn, arc, a, b, kind="d", anchor=None, tau=None, panels=DEFAULT_PANELS):
    """Vector ``∫_a^b ω(s) L(ẏ(s)) ds`` along ``arc``.

    ``ω`` is ``d_anchor(s)`` (``kind="d"``), ``d_anchor(s) - d_tau(s)``
    (``"gap"``) or ``∂_t d_anchor(s)`` (``"dt"``); ``anchor`` defaults to the
    arc's start time.  Piecewise-linear arcs integrate the weight in closed
    form per segment.
    """
    if kind not in _WEIGHTS:
        raise UsageError(f"unknown weight kind {kind!r}")
    anchor = arc.t if anchor is None else anchor
    if b <= a:
        return np.zeros(scn.d)
    if arc.kind == "PIECEWISE_LINEAR":
        cuts = np.concatenate(([a], arc.times[(arc.times > a) & (arc.times < b)], [b]))
        total = np.zeros(scn.d)
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            v = arc.velocity(scn, 0.5 * (lo + hi))
            total += _weight_integral(scn, kind, anchor, tau, lo, hi) * scn.lagrangian.value(v)
        return total
    nodes, weights = composite_rule(a, b, panels)
    vals = scn.lagrangian.value(arc.velocity(scn, nodes))
    return (weights * _weight_fn(scn, kind, anchor, tau)(nodes)) @ vals


def _discount_at_T(scn, t):
    return float(scn.discount.value(t, scn.T))


def vector_cost(scn, arc, panels=DEFAULT_PANELS):
    """``I_t(y) = ∫_t^T d_t(s) L(ẏ(s)) ds + d_t(T) g(y(T))`` as a vector in ``R^d``."""
    T = scn.T
    if arc.kind == "ANALYTIC":
        if arc.t == T:
            return scn.terminal.value(arc.x)
        nodes, weights, dts, vel = _profile(scn, arc.t, arc.x, arc.p, arc.zeta, panels)
        yT = arc.x + weights @ vel
        return (weights * dts) @ scn.lagrangian.value(vel) + _discount_at_T(scn, arc.t) * scn.terminal.value(yT)
    yT = arc.position(scn, T, panels)
    return running_integral(scn, arc, arc.t, T, panels=panels) + scn.discount.value(arc.t, T) * scn.terminal.value(yT)


def scalar_cost(scn, arc, k, panels=DEFAULT_PANELS):
    """``I_{t,ζ}(y) = ζ · I_t(y)``."""
    return float(vector_cost(scn, arc, panels) @ scn.cone.zeta(k))


def cost_halfspace(scn, arc, k, panels=DEFAULT_PANELS):
    """``J_t(y) + H⁺(ζ)``; ``k`` may be any direction of ``C⁺``, not only a base index."""
    zeta = scn.cone.zeta(k)
    return HalfSpace(zeta, float(vector_cost(scn, arc, panels) @ zeta))


def cost_set(scn, arc, panels=DEFAULT_PANELS):
    """``J_t(y) = I_t(y) + C`` (the Aumann integral of ``d_t L + C`` plus terminal cost)."""
    return UpperSet.from_point(scn.cone, vector_cost(scn, arc, panels))


# ----------------------------------------------------------------------------
# Stationarity and the costate solve
# ----------------------------------------------------------------------------


def _profile(scn, t, x, p, zeta, panels):
    """Quadrature nodes, weights, discounts and velocities of ``Y_{t,x,p,ζ}``."""
    nodes, weights = composite_rule(t, scn.T, panels)
    dts = scn.discount.value(t, nodes)
    vel = scn.lagrangian.invert_grad(zeta, p[None, :] / dts[:, None])
    return nodes, weights, dts, vel


def grad_p_position(scn, t, p, k, s, panels=DEFAULT_PANELS):
    """``∇_p Y(s) = ∫_t^s d_t(r)⁻¹ [∇²L_ζ((∇L_ζ)⁻¹(p/d_t(r)))]⁻¹ dr``."""
    zeta = scn.cone.zeta(k)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if s == t:
        return np.zeros((scn.n, scn.n))
    nodes, weights = composite_rule(t, s, panels)
    dts = scn.discount.value(t, nodes)
    vel = scn.lagrangian.invert_grad(zeta, p[None, :] / dts[:, None])
    hinv = np.linalg.inv(scn.lagrangian.hess(zeta, vel))
    return np.einsum("q,qij->ij", weights / dts, hinv)


def stationarity_F(scn, t, x, p, k, panels=DEFAULT_PANELS):
    """``F(t,x,p,ζ) = p + d_t(T) ∇g_ζ(Y_{t,x,p,ζ}(T))``."""
    zeta = scn.cone.zeta(k)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    yT = arc_position(scn, t, x, p, zeta, scn.T, panels)
    return p + scn.discount.value(t, scn.T) * scn.terminal.grad(zeta, yT)


def stationarity_jacobian(scn, t, x, p, k, panels=DEFAULT_PANELS):
    """``∇_p F = I + A`` with ``A = d_t(T) ∇²g_ζ(Y(T)) ∇_p Y(T)``."""
    zeta = scn.cone.zeta(k)
    p = np.atleast_1d(np.asarray(p, dtype=float))
    _, F, J = _newton_pieces(scn, t, np.atleast_1d(np.asarray(x, dtype=float)), p, zeta, panels)
    return J


def _newton_pieces(scn, t, x, p, zeta, panels):
    nodes, weights, dts, vel = _profile(scn, t, x, p, zeta, panels)
    yT = x + weights @ vel
    dT = scn.discount.value(t, scn.T)
    F = p + dT * scn.terminal.grad(zeta, yT)
    H = scn.lagrangian.hess(zeta, vel)
    if np.any(np.linalg.eigvalsh(H)[:, 0] <= 0):
        raise HypothesisError("h1", "∇²L_ζ singular along the candidate arc")
    gradY = np.einsum("q,qij->ij", weights / dts, np.linalg.inv(H))
    J = np.eye(scn.n) + dT * scn.terminal.hess(zeta, yT) @ gradY
    return yT, F, J


@dataclass(frozen=True)
class PSolveResult:
    """Outcome of the Newton solve for ``p(t, x, ζ)``."""

    p_star: np.ndarray
    iterations: int
    residual: float
    jacobian_min_eig: float
    condition: float
    trace: tuple = ()


def _converged(p, it, fn, J, cond, trace):
    eig = float(np.min(np.linalg.eigvals(J).real))
    return PSolveResult(p, it + 1, fn, eig, cond, tuple(trace))


def solve_p(scn, t, x, k, tol=NEWTON_TOL, max_iter=NEWTON_MAXITER, panels=DEFAULT_PANELS):
    """Newton's method on ``F(t,x,·,ζ) = 0``.

    Starts at ``p₀ = -d_t(T) ∇g_ζ(x)`` and halves the step while ``|F|`` does
    not decrease.  Converged when ``|F| ≤ tol``; if roundoff stalls the line
    search first, ``|F| ≤ tol (1 + |p|)`` is accepted instead.
    """
    zeta = scn.cone.zeta(k)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not 0.0 <= t < scn.T:
        raise DomainError(f"solve_p needs 0 ≤ t < T={scn.T}, got t={t}")
    dT = scn.discount.value(t, scn.T)
    p = -dT * scn.terminal.grad(zeta, x)
    trace = []
    for it in range(max_iter):
        _, F, J = _newton_pieces(scn, t, x, p, zeta, panels)
        fn = float(np.linalg.norm(F))
        trace.append(fn)
        cond = float(np.linalg.cond(J))
        if cond > MAX_CONDITION:
            raise ConditioningError(f"Jacobian condition {cond:.3e} exceeds {MAX_CONDITION:.0e}", trace)
        if fn <= tol:
            return _converged(p, it, fn, J, cond, trace)
        step = -np.linalg.solve(J, F)
        lam = 1.0
        for _ in range(40):
            cand = p + lam * step
            Fc = _newton_pieces(scn, t, x, cand, zeta, panels)[1]
            if np.linalg.norm(Fc) < fn:
                break
            lam *= 0.5
        else:
            if fn <= tol * (1.0 + np.linalg.norm(p)):
                return _converged(p, it, fn, J, cond, trace)
        p = cand
    raise SolverError(
        f"Newton did not converge in {max_iter} iterations at t={t}, x={x.tolist()}, ζ={zeta.tolist()}",
        trace,
    )


def optimal_arc(scn, t, x, k, result=None, panels=DEFAULT_PANELS):
    """``Y_{t,x,ζ}``, the candidate arc at the solved costate."""
    if result is None:
        result = solve_p(scn, t, x, k, panels=panels)
    return Arc.analytic(t, x, result.p_star, scn.cone.zeta(k))


# ----------------------------------------------------------------------------
# Value function
# ----------------------------------------------------------------------------


def _require_convex_terminal(scn):
    if not scn.convex_terminal:
        raise HypothesisError("h5", "the Hopf-Lax representation needs convex terminal components")


@dataclass(frozen=True)
class DirectionRecord:
    """Per-direction data behind one value threshold."""

    k: int
    threshold: float
    p_star: np.ndarray
    iterations: int
    residual: float
    jacobian_min_eig: float


def value_records(scn, t, x, panels=DEFAULT_PANELS):
    """Thresholds of ``U(t, x)`` with the costate solve behind each."""
    _require_convex_terminal(scn)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (scn.n,):
        raise UsageError(f"state must have length {scn.n}")
    if not 0.0 <= t <= scn.T:
        raise DomainError(f"value_function needs 0 ≤ t ≤ T={scn.T}, got t={t}")
    records = []
    if t == scn.T:
        gx = scn.terminal.value(x)
        for k, zeta in enumerate(scn.cone.base_grid):
            records.append(DirectionRecord(k, float(zeta @ gx), np.zeros(scn.n), 0, 0.0, 1.0))
        return records
    for k, zeta in enumerate(scn.cone.base_grid):
        try:
            res = solve_p(scn, t, x, k, panels=panels)
        except SolverError as exc:
            raise SolverError(f"direction {k}: {exc}", exc.trace) from exc
        arc = Arc.analytic(t, x, res.p_star, zeta)
        thr = float(vector_cost(scn, arc, panels) @ zeta)
        records.append(DirectionRecord(k, thr, res.p_star, res.iterations, res.residual, res.jacobian_min_eig))
    return records


def value_function(scn, t, x, panels=DEFAULT_PANELS):
    """``U(t,x) = sup_ζ (inf_p J_t(Y_{t,x,p,ζ}) + H⁺(ζ))`` over the base grid.

    At ``t = T`` the value is ``g(x) + C``.
    """
    recs = value_records(scn, t, x, panels)
    return UpperSet(scn.cone, np.array([r.threshold for r in recs]))


@dataclass(frozen=True, eq=False)
class ValueSurface:
    """Value thresholds over a list of ``(t, x)`` points.

    Arrays are indexed ``[point, direction]``; ``p_star`` carries a trailing
    state axis.
    """

    cone: object
    points_t: np.ndarray
    points_x: np.ndarray
    thresholds: np.ndarray
    p_star: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray

    def upper_set(self, i):
        return UpperSet(self.cone, self.thresholds[i])


def _surface_row(args):
    scn, t, x, panels = args
    recs = value_records(scn, t, x, panels)
    return (
        [r.threshold for r in recs],
        [r.p_star for r in recs],
        [r.iterations for r in recs],
        [r.residual for r in recs],
    )


def grid_points(ts, xs_axes):
    """Cartesian product of a time grid and per-dimension state grids, ``t`` slowest."""
    ts = np.asarray(ts, dtype=float)
    mesh = np.meshgrid(*[np.asarray(ax, dtype=float) for ax in xs_axes], indexing="ij")
    xs = np.stack([m.reshape(-1) for m in mesh], axis=-1)
    pt = np.repeat(ts, len(xs))
    px = np.tile(xs, (len(ts), 1))
    return pt, px


def value_surface(scn, points_t, points_x, jobs=1, panels=DEFAULT_PANELS):
    """Evaluate ``U`` at every point; results are merged by index."""
    points_t = np.asarray(points_t, dtype=float)
    points_x = np.asarray(points_x, dtype=float).reshape(len(points_t), scn.n)
    tasks = [(scn, float(t), x, panels) for t, x in zip(points_t, points_x)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_surface_row, tasks))
    else:
        rows = [_surface_row(task) for task in tasks]
    return ValueSurface(
        cone=scn.cone,
        points_t=points_t,
        points_x=points_x,
        thresholds=np.array([r[0] for r in rows]),
        p_star=np.array([r[1] for r in rows]),
        iterations=np.array([r[2] for r in rows], dtype=int),
        residual=np.array([r[3] for r in rows]),
    )
