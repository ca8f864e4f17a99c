"""Brute-force ground truth for the Hopf-Lax reduction.

Two independent minimizations of the scalarized cost ``I_{t,ζ}``:

* the direct method over piecewise-linear arcs with a fixed node grid, which
  never touches the costate parametrization, and
* exhaustive evaluation of ``p ↦ I_{t,ζ}(Y_{t,x,p,ζ})`` on a grid, which
  never touches Newton's method.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .exceptions import OracleError
from .hopflax import Arc, value_records
from .quadrature import DEFAULT_PANELS, composite_rule


@dataclass(frozen=True)
class DirectMethodConfig:
    node_count: int = 65
    velocity_bound: float = 10.0
    max_iters: int = 100
    tol_grad: float = 1e-11

    def __post_init__(self):
        if self.node_count < 2:
            raise ValueError("node_count must be ≥ 2")


@dataclass(frozen=True)
class DirectResult:
    arc: Arc
    cost: float
    iterations: int
    grad_norm: float


def _segment_weights(scn, t, times):
    return np.array([scn.discount.integral(t, a, b) for a, b in zip(times[:-1], times[1:])])


def direct_cost(scn, t, x, zeta, times, velocities):
    """Exact ``I_{t,ζ}`` of the piecewise-linear arc with the given segment velocities."""
    w = _segment_weights(scn, t, times)
    yT = x + np.diff(times) @ velocities
    return float(w @ scn.lagrangian.scalar(zeta, velocities) + scn.discount.value(t, scn.T) * scn.terminal.scalar(zeta, yT))


def direct_minimize(scn, t, x, k, cfg=None):
    """Minimize ``I_{t,ζ}`` over piecewise-linear arcs on a uniform node grid.

    The start node is fixed at ``x`` and the end node is free.  The unknowns
    are the segment velocities; the cost is strictly convex in them, so a
    damped Newton iteration on the full velocity vector converges globally.
    """
    cfg = cfg or DirectMethodConfig()
    zeta = scn.cone.zeta(k)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n, T = scn.n, scn.T
    times = np.linspace(t, T, cfg.node_count)
    h = np.diff(times)
    m = len(h)
    w = _segment_weights(scn, t, times)
    dT = float(scn.discount.value(t, T))
    lag, term = scn.lagrangian, scn.terminal

    def cost_grad(v):
        yT = x + h @ v
        c = w @ lag.scalar(zeta, v) + dT * term.scalar(zeta, yT)
        g = w[:, None] * lag.grad(zeta, v) + dT * h[:, None] * term.grad(zeta, yT)[None, :]
        return float(c), g

    def hessian(v):
        yT = x + h @ v
        H = dT * np.kron(np.outer(h, h), term.hess(zeta, yT))
        blocks = w[:, None, None] * lag.hess(zeta, v)
        for j in range(m):
            H[j * n : (j + 1) * n, j * n : (j + 1) * n] += blocks[j]
        return H

    def pnorm(g):
        return float(np.max(np.abs(g / w[:, None])))

    v = np.tile(lag.invert_grad(zeta, np.zeros(n)), (m, 1))
    c, g = cost_grad(v)
    for it in range(1, cfg.max_iters + 1):
        gnorm = pnorm(g)
        if gnorm <= cfg.tol_grad:
            break
        direction = -np.linalg.solve(hessian(v), g.reshape(-1)).reshape(m, n)
        slope = float(np.sum(g * direction))
        step = 1.0
        while step >= 1e-12:
            v_new = v + step * direction
            c_new, g_new = cost_grad(v_new)
            # near the minimizer cost differences sink below roundoff, so a
            # drop in the gradient is accepted as progress too
            if c_new <= c + 1e-4 * step * slope or pnorm(g_new) < 0.5 * gnorm:
                break
            step *= 0.5
        else:
            raise OracleError(f"direct method line search failed at preconditioned gradient {gnorm:.3e}")
        v, c, g = v_new, c_new, g_new
    else:
        raise OracleError(f"direct method stalled: preconditioned gradient {gnorm:.3e} after {cfg.max_iters} iterations")
    gnorm = pnorm(g)
    if np.any(np.abs(v) >= cfg.velocity_bound):
        raise OracleError(f"optimal velocities leave the box [-{cfg.velocity_bound}, {cfg.velocity_bound}]")
    nodes = np.vstack([x, x + np.cumsum(h[:, None] * v, axis=0)])
    arc = Arc.piecewise_linear(times, nodes)
    return DirectResult(arc, direct_cost(scn, t, x, zeta, times, v), it, gnorm)


@dataclass(frozen=True)
class PGridResult:
    p_best: np.ndarray
    cost: float


def pgrid_costs(scn, t, x, zeta, ps, panels=DEFAULT_PANELS, chunk=2048):
    """``I_{t,ζ}(Y_{t,x,p,ζ})`` for every row of ``ps``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nodes, weights = composite_rule(t, scn.T, panels)
    dts = scn.discount.value(t, nodes)
    dT = float(scn.discount.value(t, scn.T))
    out = np.empty(len(ps))
    for i in range(0, len(ps), chunk):
        p = ps[i : i + chunk]
        vel = scn.lagrangian.invert_grad(zeta, p[:, None, :] / dts[None, :, None])
        run = scn.lagrangian.scalar(zeta, vel) @ (weights * dts)
        yT = x + np.einsum("q,pqn->pn", weights, vel)
        out[i : i + chunk] = run + dT * scn.terminal.scalar(zeta, yT)
    return out


def pgrid_minimize(scn, t, x, k, lo, hi, step, panels=DEFAULT_PANELS):
    """Exhaustive minimization of ``I_{t,ζ}(Y_{t,x,p,ζ})`` over ``[lo, hi]^n`` with spacing ``step``."""
    zeta = scn.cone.zeta(k)
    axis = np.arange(lo, hi + 0.5 * step, step)
    ps = np.array(list(itertools.product(axis, repeat=scn.n)), dtype=float)
    costs = pgrid_costs(scn, t, x, zeta, ps, panels)
    i = int(np.argmin(costs))
    best = ps[i]
    if np.any(np.isclose(best, axis[0])) or np.any(np.isclose(best, axis[-1])):
        raise OracleError(f"p-grid minimizer {best.tolist()} lies on the box boundary")
    return PGridResult(best, float(costs[i]))


@dataclass(frozen=True)
class OracleRow:
    t: float
    x: tuple
    k: int
    v_hopflax: float
    v_direct: float
    M: int
    iters: int

    @property
    def gap(self):
        return self.v_direct - self.v_hopflax


def _oracle_point(args):
    scn, t, x, directions, cfg = args
    recs = value_records(scn, t, x)
    rows = []
    for k in directions:
        res = direct_minimize(scn, t, x, k, cfg)
        rows.append(OracleRow(float(t), tuple(float(v) for v in x), int(k), recs[k].threshold, res.cost, cfg.node_count, res.iterations))
    return rows


def compare_with_direct(scn, points_t, points_x, directions=None, cfg=None, jobs=1):
    """Hopf-Lax thresholds against the direct method at each point and direction."""
    cfg = cfg or DirectMethodConfig()
    directions = range(scn.cone.K) if directions is None else directions
    points_x = np.asarray(points_x, dtype=float).reshape(len(points_t), scn.n)
    tasks = [(scn, float(t), x, list(directions), cfg) for t, x in zip(points_t, points_x)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_oracle_point, tasks))
    else:
        chunks = [_oracle_point(task) for task in tasks]
    return [row for chunk in chunks for row in chunk]
