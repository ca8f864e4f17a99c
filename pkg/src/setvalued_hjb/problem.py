"""Problem instances: vector Lagrangian, terminal cost and discount family.

All three ingredients come from closed families with analytic first and
second derivatives, so every derivative consumed downstream has an exact
reference value.  Arrays follow the convention ``w.shape == (..., n)``;
vector-valued maps return ``(..., d)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache

import numpy as np

from .exceptions import ConfigurationError, DomainError, HypothesisError, InversionError
from .lattice import ConeSpec

INVERT_TOL = 1e-12
INVERT_MAXITER = 50
DISCOUNT_FLOOR = 1e-6
TIME_TOL = 1e-12


# ----------------------------------------------------------------------------
# Lagrangian
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LagrangianSpec:
    """``L_i(w) = ½ (w - a_i)ᵀ Q_i (w - a_i) + b_i + ε_i |w|⁴``.

    ``family`` is ``"QUADRATIC"`` (all ``ε_i = 0``) or ``"QUARTIC_REG"``.
    """

    family: str
    Q: np.ndarray  # (d, n, n)
    a: np.ndarray  # (d, n)
    b: np.ndarray  # (d,)
    eps: np.ndarray  # (d,)

    @classmethod
    def quadratic(cls, Q, a=None, b=None):
        return cls.build("QUADRATIC", Q, a, b, None)

    @classmethod
    def quartic_reg(cls, Q, a=None, b=None, eps=None):
        return cls.build("QUARTIC_REG", Q, a, b, eps)

    @classmethod
    def build(cls, family, Q, a=None, b=None, eps=None):
        family = str(family).upper()
        if family not in ("QUADRATIC", "QUARTIC_REG"):
            raise ConfigurationError(f"unknown Lagrangian family {family!r}")
        Q = np.asarray(Q, dtype=float)
        if Q.ndim != 3 or Q.shape[1] != Q.shape[2]:
            raise ConfigurationError("lagrangian.Q must have shape (d, n, n)")
        d, n = Q.shape[0], Q.shape[1]
        if not np.allclose(Q, np.transpose(Q, (0, 2, 1)), rtol=0, atol=1e-12):
            raise ConfigurationError("lagrangian.Q matrices must be symmetric")
        for i in range(d):
            if np.linalg.eigvalsh(Q[i])[0] <= 0:
                raise ConfigurationError(f"lagrangian.Q[{i}] is not positive definite")
        a = np.zeros((d, n)) if a is None else np.asarray(a, dtype=float).reshape(d, n)
        b = np.zeros(d) if b is None else np.asarray(b, dtype=float).reshape(d)
        if family == "QUADRATIC":
            if eps is not None and np.any(np.asarray(eps) != 0):
                raise ConfigurationError("QUADRATIC Lagrangian takes no quartic term")
            eps = np.zeros(d)
        else:
            eps = np.zeros(d) if eps is None else np.asarray(eps, dtype=float).reshape(d)
            if np.any(eps < 0):
                raise ConfigurationError("lagrangian.eps must be nonnegative")
        return cls(family, Q, a, b, eps)

    @property
    def d(self):
        return self.Q.shape[0]

    @property
    def n(self):
        return self.Q.shape[1]

    def value(self, w):
        """Vector ``L(w)`` with shape ``(..., d)``."""
        w = np.asarray(w, dtype=float)
        diff = w[..., None, :] - self.a  # (..., d, n)
        quad = 0.5 * np.einsum("...di,dij,...dj->...d", diff, self.Q, diff)
        r2 = np.sum(w * w, axis=-1)[..., None]
        return quad + self.b + self.eps * r2**2

    def _weighted(self, zeta):
        return self._weighted_cached(np.asarray(zeta, dtype=float).tobytes())

    @lru_cache(maxsize=1024)
    def _weighted_cached(self, key):
        zeta = np.frombuffer(key)
        Qz = np.einsum("d,dij->ij", zeta, self.Q)
        shift = np.einsum("d,dij,dj->i", zeta, self.Q, self.a)
        Qz_inv = np.linalg.inv(Qz)
        return Qz, shift, float(zeta @ self.eps), Qz_inv

    def scalar(self, zeta, w):
        return self.value(w) @ zeta

    def grad(self, zeta, w):
        w = np.asarray(w, dtype=float)
        Qz, shift, e, _ = self._weighted(zeta)
        g = w @ Qz.T - shift
        if e:
            g = g + 4.0 * e * np.sum(w * w, axis=-1, keepdims=True) * w
        return g

    def hess(self, zeta, w):
        w = np.asarray(w, dtype=float)
        Qz, _, e, _ = self._weighted(zeta)
        H = np.broadcast_to(Qz, w.shape[:-1] + Qz.shape).copy()
        if e:
            r2 = np.sum(w * w, axis=-1)[..., None, None]
            H += e * (4.0 * r2 * np.eye(self.n) + 8.0 * w[..., :, None] * w[..., None, :])
        return H

    def invert_grad(self, zeta, p):
        """Solve ``∇L_ζ(w) = p`` for ``w``; ``p`` may be batched ``(..., n)``."""
        p = np.asarray(p, dtype=float)
        _, shift, e, Qz_inv = self._weighted(zeta)
        w = (p + shift) @ Qz_inv.T
        if not e:
            return w
        return self._newton_invert(zeta, p, w)

    def _newton_invert(self, zeta, p, w):
        shape = p.shape
        p = p.reshape(-1, self.n)
        w = w.reshape(-1, self.n).copy()
        tol = INVERT_TOL * (1.0 + np.linalg.norm(p, axis=1))
        r = self.grad(zeta, w) - p
        rn = np.linalg.norm(r, axis=1)
        for _ in range(INVERT_MAXITER):
            active = rn > tol
            if not np.any(active):
                return w.reshape(shape)
            wa, ra, rna = w[active], r[active], rn[active]
            step = -np.linalg.solve(self.hess(zeta, wa), ra[..., None])[..., 0]
            lam = np.ones(len(wa))
            cand = wa + step
            rc = self.grad(zeta, cand) - p[active]
            rcn = np.linalg.norm(rc, axis=1)
            for _ in range(30):
                worse = rcn >= rna
                if not np.any(worse):
                    break
                lam[worse] *= 0.5
                cand[worse] = wa[worse] + lam[worse, None] * step[worse]
                rc[worse] = self.grad(zeta, cand[worse]) - p[active][worse]
                rcn[worse] = np.linalg.norm(rc[worse], axis=1)
            w[active], r[active], rn[active] = cand, rc, rcn
        if np.any(rn > tol):
            raise InversionError("∇L_ζ inversion did not converge in 50 iterations", float(rn.max()))
        return w.reshape(shape)


# ----------------------------------------------------------------------------
# Terminal cost
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TerminalSpec:
    """``g_i(x) = s_i √(1 + |x - m_i|²) + G_i·x + g0_i`` with ``s_i ≥ 0``.

    ``family`` is ``"LINEAR"`` (all ``s_i = 0``) or ``"CONVEX_QUAD_SAT"``.
    Every component is smooth, convex and globally Lipschitz.
    """

    family: str
    G: np.ndarray  # (d, n)
    g0: np.ndarray  # (d,)
    scale: np.ndarray  # (d,)
    centers: np.ndarray  # (d, n)

    @classmethod
    def linear(cls, G, g0=None):
        return cls.build("LINEAR", G, g0)

    @classmethod
    def build(cls, family, G, g0=None, scale=None, centers=None):
        family = str(family).upper()
        if family not in ("LINEAR", "CONVEX_QUAD_SAT"):
            raise ConfigurationError(f"unknown terminal family {family!r}")
        G = np.atleast_2d(np.asarray(G, dtype=float))
        d, n = G.shape
        g0 = np.zeros(d) if g0 is None else np.asarray(g0, dtype=float).reshape(d)
        if family == "LINEAR":
            if scale is not None and np.any(np.asarray(scale) != 0):
                raise ConfigurationError("LINEAR terminal cost takes no saturating term")
            scale, centers = np.zeros(d), np.zeros((d, n))
        else:
            scale = np.ones(d) if scale is None else np.asarray(scale, dtype=float).reshape(d)
            centers = np.zeros((d, n)) if centers is None else np.asarray(centers, dtype=float).reshape(d, n)
            if np.any(scale < 0):
                raise ConfigurationError("terminal.scale must be nonnegative (convex components)")
        return cls(family, G, g0, scale, centers)

    @property
    def d(self):
        return self.G.shape[0]

    @property
    def n(self):
        return self.G.shape[1]

    def _rho(self, x):
        diff = np.asarray(x, dtype=float)[..., None, :] - self.centers  # (..., d, n)
        return diff, np.sqrt(1.0 + np.sum(diff * diff, axis=-1))  # (..., d)

    def value(self, x):
        x = np.asarray(x, dtype=float)
        _, rho = self._rho(x)
        return self.scale * rho + x @ self.G.T + self.g0

    def scalar(self, zeta, x):
        return self.value(x) @ zeta

    def grad(self, zeta, x):
        diff, rho = self._rho(x)
        coef = zeta * self.scale / rho  # (..., d)
        return np.einsum("...d,...dn->...n", coef, diff) + zeta @ self.G

    def hess(self, zeta, x):
        diff, rho = self._rho(x)
        n = self.n
        coef = zeta * self.scale
        eye = np.eye(n)
        H = np.einsum("...d,ij->...ij", coef / rho, eye)
        H -= np.einsum("...d,...di,...dj->...ij", coef / rho**3, diff, diff)
        return H

    def lipschitz_bound(self, zeta):
        return float(np.sum(np.abs(zeta) * self.scale) + np.linalg.norm(zeta @ self.G))


# ----------------------------------------------------------------------------
# Discount
# ----------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DiscountSpec:
    """Discount families ``d_t(s)``, ``0 ≤ t ≤ s ≤ T``.

    CONSTANT_RATE  ``exp(-r (s - t))``
    VARIABLE_RATE  ``exp(-∫_t^s ρ)`` with ``ρ`` piecewise constant
    HYPERBOLIC     ``1 / (1 + k (s - t))``
    """

    family: str
    rate: float = 0.0
    breakpoints: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rates: np.ndarray = field(default_factory=lambda: np.zeros(1))

    @classmethod
    def constant_rate(cls, r):
        return cls.build("CONSTANT_RATE", rate=r)

    @classmethod
    def hyperbolic(cls, k):
        return cls.build("HYPERBOLIC", rate=k)

    @classmethod
    def variable_rate(cls, breakpoints, rates):
        return cls.build("VARIABLE_RATE", breakpoints=breakpoints, rates=rates)

    @classmethod
    def build(cls, family, rate=0.0, breakpoints=None, rates=None):
        family = str(family).upper()
        if family in ("CONSTANT_RATE", "HYPERBOLIC"):
            rate = float(rate)
            if not np.isfinite(rate) or rate < 0:
                raise ConfigurationError("discount.rate must be finite and ≥ 0")
            return cls(family, rate=rate)
        if family == "VARIABLE_RATE":
            bp = np.zeros(0) if breakpoints is None else np.asarray(breakpoints, dtype=float).reshape(-1)
            rs = np.asarray(rates, dtype=float).reshape(-1)
            if rs.shape[0] != bp.shape[0] + 1:
                raise ConfigurationError("discount.rates needs one more entry than discount.breakpoints")
            if np.any(np.diff(bp) <= 0):
                raise ConfigurationError("discount.breakpoints must be strictly increasing")
            if np.any(rs < 0) or not np.all(np.isfinite(rs)):
                raise ConfigurationError("discount.rates must be finite and ≥ 0")
            return cls(family, breakpoints=bp, rates=rs)
        raise ConfigurationError(f"unknown discount family {family!r}")

    def _cum(self, s):
        """``∫_0^s ρ`` for the variable-rate family."""
        s = np.asarray(s, dtype=float)
        lo = np.concatenate(([0.0], self.breakpoints))
        hi = np.concatenate((self.breakpoints, [np.inf]))
        total = np.zeros_like(s)
        for j, rho in enumerate(self.rates):
            total = total + rho * (np.clip(s, lo[j], hi[j]) - lo[j])
        return total

    def rho(self, t):
        idx = np.searchsorted(self.breakpoints, t, side="right")
        return self.rates[idx]

    def value(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        if self.family == "CONSTANT_RATE":
            return np.exp(-self.rate * (s - t))
        if self.family == "HYPERBOLIC":
            return 1.0 / (1.0 + self.rate * (s - t))
        return np.exp(-(self._cum(s) - self._cum(t)))

    def dt(self, t, s):
        """``∂ d_t(s) / ∂t``."""
        if self.family == "CONSTANT_RATE":
            return self.rate * self.value(t, s)
        if self.family == "HYPERBOLIC":
            return self.rate * self.value(t, s) ** 2
        return self.rho(t) * self.value(t, s)

    def integral(self, t, a, b):
        """``∫_a^b d_t(s) ds`` in closed form, ``t ≤ a ≤ b``."""
        if b <= a:
            return 0.0
        if self.family == "CONSTANT_RATE":
            r = self.rate
            if r == 0.0:
                return b - a
            return float(np.exp(-r * (a - t)) * -np.expm1(-r * (b - a)) / r)
        if self.family == "HYPERBOLIC":
            k = self.rate
            if k == 0.0:
                return b - a
            return float(np.log1p(k * (b - t)) - np.log1p(k * (a - t))) / k
        cuts = np.concatenate(([a], self.breakpoints[(self.breakpoints > a) & (self.breakpoints < b)], [b]))
        total = 0.0
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            rho = float(self.rho(lo))
            start = float(self.value(t, lo))
            total += start * (hi - lo) if rho == 0.0 else start * -np.expm1(-rho * (hi - lo)) / rho
        return total

    def dt_integral(self, t, a, b):
        """``∫_a^b ∂d_t(s)/∂t ds`` in closed form."""
        if b <= a:
            return 0.0
        if self.family == "CONSTANT_RATE":
            return self.rate * self.integral(t, a, b)
        if self.family == "HYPERBOLIC":
            return float(self.value(t, a) - self.value(t, b))
        return float(self.rho(t)) * self.integral(t, a, b)

    def lower_bound(self, T):
        """``a = inf d_t(s)`` over ``0 ≤ t ≤ s ≤ T``; every family here decreases in ``s - t``."""
        if self.family == "VARIABLE_RATE":
            return float(np.exp(-self._cum(T)))
        return float(self.value(0.0, T))

    @property
    def is_c1_in_t(self):
        return self.family != "VARIABLE_RATE" or bool(np.all(self.rates == self.rates[0]))


# ----------------------------------------------------------------------------
# Scenario
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class HypothesisResult:
    name: str
    passed: bool
    message: str
    error: HypothesisError | None = None


@dataclass(frozen=True, eq=False)
class Scenario:
    """A problem instance.  Hypotheses h1-h3 are probed on construction."""

    cone: ConeSpec
    lagrangian: LagrangianSpec
    terminal: TerminalSpec
    discount: DiscountSpec
    horizon_T: float
    a_lower: float = field(init=False)

    def __post_init__(self):
        if not (np.isfinite(self.horizon_T) and self.horizon_T > 0):
            raise ConfigurationError("horizon_T must be a positive real")
        d = self.cone.dim_d
        if self.lagrangian.d != d or self.terminal.d != d:
            raise ConfigurationError(
                f"objective dimension mismatch: cone d={d}, lagrangian d={self.lagrangian.d}, "
                f"terminal d={self.terminal.d}"
            )
        if self.lagrangian.n != self.terminal.n:
            raise ConfigurationError("state dimension mismatch between lagrangian and terminal")
        object.__setattr__(self, "a_lower", self.discount.lower_bound(self.horizon_T))
        for res in self.check_hypotheses(("h1", "h2", "h3")):
            if not res.passed:
                raise res.error

    @property
    def n(self):
        return self.lagrangian.n

    @property
    def d(self):
        return self.cone.dim_d

    @property
    def T(self):
        return self.horizon_T

    def with_k_grid(self, k_grid):
        if k_grid == self.cone.k_grid:
            return self
        return Scenario(self.cone.with_k_grid(k_grid), self.lagrangian, self.terminal, self.discount, self.horizon_T)

    # -- hypothesis probes ---------------------------------------------------

    def _probe_points(self, n_pts=64, radius=5.0):
        rng = np.random.default_rng(20240531)
        pts = rng.uniform(-radius, radius, size=(n_pts, self.n))
        return np.vstack([np.zeros(self.n), pts])

    def check_hypotheses(self, which=("h1", "h2", "h3", "h4", "h5")):
        """Run the finite probes; returns one :class:`HypothesisResult` each.

        Probing is necessary but not sufficient: a pass means no violation
        was found at the sampled points.
        """
        out = []
        for name in which:
            try:
                getattr(self, f"_probe_{name}")()
            except HypothesisError as exc:
                out.append(HypothesisResult(name, False, str(exc), exc))
            else:
                out.append(HypothesisResult(name, True, "ok"))
        return out

    def require(self, *which):
        for res in self.check_hypotheses(which):
            if not res.passed:
                raise res.error

    def _probe_h1(self):
        pts = self._probe_points()
        ladder = np.array([1e2, 1e3, 1e4])
        rng = np.random.default_rng(7)
        dirs = np.vstack([np.eye(self.n)[0], rng.normal(size=self.n)])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        for k, zeta in enumerate(self.cone.base_grid):
            eig = np.linalg.eigvalsh(self.lagrangian.hess(zeta, pts))[:, 0]
            if np.any(eig <= 0):
                i = int(np.argmin(eig))
                raise HypothesisError("h1", f"∇²L_ζ not positive definite in direction {k}", pts[i].tolist())
            for u in dirs:
                w = ladder[:, None] * u
                ratio = self.lagrangian.scalar(zeta, w) / ladder
                if not np.all(np.diff(ratio) > 0):
                    raise HypothesisError("h1", f"L_ζ/|w| not superlinear in direction {k}", w[-1].tolist())

    def _probe_h2(self):
        pts = np.vstack([self._probe_points(), 1e6 * self._probe_points(16, 1.0)])
        for k, zeta in enumerate(self.cone.base_grid):
            gn = np.linalg.norm(self.terminal.grad(zeta, pts), axis=1)
            bound = self.terminal.lipschitz_bound(zeta)
            if np.any(gn > bound * (1 + 1e-9) + 1e-12):
                raise HypothesisError("h2", f"g_ζ gradient exceeds its Lipschitz bound in direction {k}")

    def _probe_h3(self):
        T = self.horizon_T
        ts = np.linspace(0.0, T, 11)
        if np.any(np.abs(self.discount.value(ts, ts) - 1.0) > 0):
            raise HypothesisError("h3", "d_t(t) != 1")
        grid_t, grid_s = np.meshgrid(ts, ts, indexing="ij")
        mask = grid_s >= grid_t
        vals = self.discount.value(grid_t[mask], grid_s[mask])
        if np.any(vals > 1.0) or np.any(vals <= 0.0):
            raise HypothesisError("h3", "d_t(s) outside (0, 1]")
        if self.a_lower < DISCOUNT_FLOOR:
            raise HypothesisError("h3", f"discount lower bound a = {self.a_lower:.3g} below floor {DISCOUNT_FLOOR}")

    def _probe_h4(self):
        if not self.discount.is_c1_in_t:
            raise HypothesisError("h4", "piecewise-constant rate with jumps is not C¹ in t")
        T = self.horizon_T
        h = 1e-6
        for t in np.linspace(0.1 * T, 0.8 * T, 5):
            s = np.linspace(t + 2 * h, T, 5)
            fd = (self.discount.value(t + h, s) - self.discount.value(t - h, s)) / (2 * h)
            exact = self.discount.dt(t, s)
            if np.any(np.abs(fd - exact) > 1e-6 * np.maximum(1.0, np.abs(exact))):
                raise HypothesisError("h4", "∂d/∂t disagrees with finite differences", [t])

    def _probe_h5(self):
        pts = self._probe_points()
        for k, zeta in enumerate(self.cone.base_grid):
            eig = np.linalg.eigvalsh(self.terminal.hess(zeta, pts))[:, 0]
            if np.any(eig < -1e-12):
                i = int(np.argmin(eig))
                raise HypothesisError("h5", f"g_ζ not convex in direction {k}", pts[i].tolist())

    @cached_property
    def convex_terminal(self):
        return all(r.passed for r in self.check_hypotheses(("h5",)))


# ----------------------------------------------------------------------------
# Operations
# ----------------------------------------------------------------------------


def scalarize_L(scn, k, w):
    """``L_ζ(w) = ζ·L(w)`` for base index ``k`` (or explicit direction)."""
    return scn.lagrangian.scalar(scn.cone.zeta(k), w)


def grad_L_zeta(scn, k, w):
    return scn.lagrangian.grad(scn.cone.zeta(k), w)


def hess_L_zeta(scn, k, w):
    return scn.lagrangian.hess(scn.cone.zeta(k), w)


def invert_grad_L(scn, k, p):
    """``(∇L_ζ)⁻¹(p)``; residual ``≤ 1e-12 (1 + |p|)``."""
    return scn.lagrangian.invert_grad(scn.cone.zeta(k), p)


def scalarize_g(scn, k, x):
    return scn.terminal.scalar(scn.cone.zeta(k), x)


def grad_g_zeta(scn, k, x):
    return scn.terminal.grad(scn.cone.zeta(k), x)


def hess_g_zeta(scn, k, x):
    return scn.terminal.hess(scn.cone.zeta(k), x)


def _check_times(scn, t, s):
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    T = scn.horizon_T
    if np.any(t < -TIME_TOL) or np.any(s > T + TIME_TOL) or np.any(s < t - TIME_TOL):
        raise DomainError(f"discount needs 0 ≤ t ≤ s ≤ T={T}")
    return t, s


def discount(scn, t, s):
    t, s = _check_times(scn, t, s)
    return scn.discount.value(t, s)


def discount_dt(scn, t, s):
    t, s = _check_times(scn, t, s)
    return scn.discount.dt(t, s)
