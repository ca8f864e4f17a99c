"""Upper sets of R^d ordered by a convex cone, stored through support thresholds.

An element ``A`` of the lattice ``(F(R^d, C), ⊇)`` is represented by its lower
support values along a finite base ``ζ_1, ..., ζ_K`` of the dual cone::

    v_k = inf { ζ_k · z : z ∈ A }

and the represented point set is ``⋂_k {z : ζ_k · z ≥ v_k}``.  Every set the
value-function pipeline produces is a finite intersection of such half-spaces,
so nothing is lost for those sets.  For general closed convex upper sets the
representation is an outer approximation whose quality is controlled by ``K``.

Thresholds live in the extended reals.  ``+inf`` in any direction means the
set is empty and is normalized to ``+inf`` everywhere; ``-inf`` means the set
is unbounded below along that direction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .exceptions import ConfigurationError, UsageError

BASE_TOL = 1e-12


def _simplex_lattice(m: int, n: int) -> np.ndarray:
    """Barycentric points ``i / n`` with integer parts summing to ``n``.

    Ordered so that for ``m == 2`` the weight on the first generator runs
    from 1 down to 0.
    """
    if m == 1:
        return np.ones((1, 1))
    pts = []
    for cuts in itertools.combinations(range(n + m - 1), m - 1):
        parts = np.diff((-1,) + cuts + (n + m - 1,)) - 1
        pts.append(parts[::-1])
    pts = np.array(pts, dtype=float) / n
    order = np.lexsort(pts.T[::-1])[::-1]
    return pts[order]


@dataclass(frozen=True, eq=False)
class ConeSpec:
    """Ordering cone ``C`` described through generators of its dual ``C⁺``.

    Parameters
    ----------
    generators_dual : array (m, d)
        Vectors spanning ``C⁺``; normalized to unit length on construction.
    c0 : array (d,), optional
        Interior point of ``C``.  Defaults to the sum of the unit dual
        generators, which for the nonnegative orthant is ``(1, ..., 1)``.
    k_grid : int
        Grid resolution.  For two generators this is exactly the number of
        base directions; for ``m > 2`` generators the grid is the simplex
        lattice with ``k_grid - 1`` subdivisions per edge.
    """

    generators_dual: np.ndarray
    c0: np.ndarray
    base_grid: np.ndarray
    k_grid: int

    @classmethod
    def from_generators(cls, generators_dual, c0=None, k_grid: int = 33) -> "ConeSpec":
        gens = np.atleast_2d(np.asarray(generators_dual, dtype=float))
        if gens.ndim != 2 or gens.shape[0] == 0 or gens.shape[1] == 0:
            raise ConfigurationError("ConeSpec: generators_dual must be a nonempty (m, d) array")
        if not np.all(np.isfinite(gens)):
            raise ConfigurationError("ConeSpec: dual generators must be finite")
        norms = np.linalg.norm(gens, axis=1)
        for i, nrm in enumerate(norms):
            if nrm <= BASE_TOL:
                raise ConfigurationError(
                    f"ConeSpec: dual generator {i} is the zero vector; "
                    "every base element must be nonzero"
                )
        gens = gens / norms[:, None]
        d = gens.shape[1]

        if c0 is None:
            c0 = gens.sum(axis=0)
        c0 = np.asarray(c0, dtype=float).reshape(-1)
        if c0.shape != (d,):
            raise ConfigurationError(f"ConeSpec: c0 must have length {d}, got {c0.shape[0]}")
        margins = gens @ c0
        if np.any(margins <= BASE_TOL):
            bad = int(np.argmin(margins))
            raise ConfigurationError(
                f"ConeSpec: c0 is not interior to C (generator {bad} has ζ·c0 = {margins[bad]:.3g} ≤ 0)"
            )

        k_grid = int(k_grid)
        m = gens.shape[0]
        if k_grid < 1 or (m > 1 and k_grid < 2):
            raise ConfigurationError("ConeSpec: k_grid must be ≥ 2 when C⁺ has several generators")
        bary = _simplex_lattice(m, max(k_grid - 1, 1))
        zetas = bary @ gens
        zetas = zetas / (zetas @ c0)[:, None]

        spec = cls(
            generators_dual=gens,
            c0=c0,
            base_grid=zetas,
            k_grid=k_grid,
        )
        for arr in (spec.generators_dual, spec.c0, spec.base_grid):
            arr.setflags(write=False)
        spec.validate()
        return spec

    @property
    def dim_d(self) -> int:
        return self.base_grid.shape[1]

    @property
    def K(self) -> int:
        return self.base_grid.shape[0]

    def with_k_grid(self, k_grid: int) -> "ConeSpec":
        return ConeSpec.from_generators(self.generators_dual, self.c0, k_grid)

    def interior_probes(self) -> np.ndarray:
        """Points of ``int C``: ``c0`` and ``c0 ± (r/2) e_i`` inside the ball of radius ``r``."""
        r = float(np.min(self.generators_dual @ self.c0))
        eye = np.eye(self.dim_d) * (0.5 * r)
        return np.vstack([self.c0, self.c0 + eye, self.c0 - eye])

    def validate(self) -> None:
        z = self.base_grid
        if np.any(np.linalg.norm(z, axis=1) <= BASE_TOL):
            raise ConfigurationError("ConeSpec: base grid contains the zero vector")
        if np.any(np.abs(z @ self.c0 - 1.0) > BASE_TOL):
            raise ConfigurationError("ConeSpec: base grid elements must satisfy ζ·c0 = 1")
        if np.any(z @ self.interior_probes().T <= 0.0):
            raise ConfigurationError("ConeSpec: a base direction is not positive on int C")

    def zeta(self, k) -> np.ndarray:
        """Base direction ``k``, or ``k`` itself when it is already a vector."""
        if np.ndim(k) == 0:
            k = int(k)
            if not 0 <= k < self.K:
                raise UsageError(f"base index {k} outside 0..{self.K - 1}")
            return self.base_grid[k]
        zeta = np.asarray(k, dtype=float)
        if zeta.shape != (self.dim_d,):
            raise UsageError(f"direction must have length {self.dim_d}")
        return zeta

    def same_as(self, other: "ConeSpec") -> bool:
        return self is other or (
            self.base_grid.shape == other.base_grid.shape
            and np.array_equal(self.base_grid, other.base_grid)
        )


def _normalize(v: np.ndarray) -> np.ndarray:
    v = np.array(v, dtype=float)
    if np.any(np.isnan(v)):
        raise UsageError("thresholds must not be NaN")
    if np.any(v == np.inf):
        v[:] = np.inf
    return v


@dataclass(frozen=True, eq=False)
class UpperSet:
    """Closed convex upper set ``A = A ⊕ C`` through per-direction thresholds."""

    cone: ConeSpec
    thresholds: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = _normalize(np.reshape(self.thresholds, -1))
        if v.shape != (self.cone.K,):
            raise UsageError(f"expected {self.cone.K} thresholds, got {v.shape[0]}")
        v.setflags(write=False)
        object.__setattr__(self, "thresholds", v)

    def __repr__(self):
        return f"UpperSet(K={self.cone.K}, thresholds={np.array2string(self.thresholds, precision=6)})"

    @classmethod
    def empty(cls, cone):
        return cls(cone, np.full(cone.K, np.inf))

    @classmethod
    def whole_space(cls, cone):
        return cls(cone, np.full(cone.K, -np.inf))

    @classmethod
    def ordering_cone(cls, cone):
        """The cone ``C`` itself, the neutral element of ⊕."""
        return cls(cone, np.zeros(cone.K))

    @classmethod
    def from_point(cls, cone, z):
        """``{z} + C``."""
        return cls(cone, cone.base_grid @ np.asarray(z, dtype=float))

    @classmethod
    def from_halfspace(cls, cone, k: int, threshold: float):
        """``{z : ζ_k·z ≥ threshold}``; unbounded below in every other direction."""
        v = np.full(cone.K, -np.inf)
        v[k] = threshold
        return cls(cone, v)

    @property
    def is_empty(self) -> bool:
        return bool(np.all(self.thresholds == np.inf))

    @property
    def is_whole_space(self) -> bool:
        return bool(np.all(self.thresholds == -np.inf))

    def contains(self, z, tol: float = 0.0) -> bool:
        if self.is_empty:
            return False
        return bool(np.all(self.cone.base_grid @ np.asarray(z, dtype=float) >= self.thresholds - tol))

    def __add__(self, other):
        return minkowski_sum_closed(self, other)


@dataclass(frozen=True)
class HalfSpace:
    """``{z : ζ·z ≥ threshold}``; ``-inf`` is the whole space, ``+inf`` the empty set."""

    zeta: np.ndarray
    threshold: float

    def contains(self, z) -> bool:
        return float(np.dot(self.zeta, z)) >= self.threshold

    def normalized(self) -> tuple[np.ndarray, float]:
        nrm = float(np.linalg.norm(self.zeta))
        return np.asarray(self.zeta, dtype=float) / nrm, self.threshold / nrm

    def same_set(self, other: "HalfSpace", tol: float = BASE_TOL) -> bool:
        """Point-set equality, insensitive to positive rescaling of ``(ζ, v)``."""
        if np.isinf(self.threshold) or np.isinf(other.threshold):
            # whole space / empty set do not depend on the normal
            return self.threshold == other.threshold
        za, va = self.normalized()
        zb, vb = other.normalized()
        return bool(np.allclose(za, zb, rtol=0, atol=tol) and abs(va - vb) <= tol * max(1.0, abs(va)))

    def scaled(self, lam: float) -> "HalfSpace":
        if lam <= 0:
            raise UsageError("half-spaces may only be rescaled by λ > 0")
        return HalfSpace(lam * np.asarray(self.zeta, dtype=float), lam * self.threshold)


def _check_same_cone(*sets: UpperSet) -> ConeSpec:
    cone = sets[0].cone
    for s in sets[1:]:
        if not cone.same_as(s.cone):
            raise ConfigurationError("upper sets are defined over different ConeSpecs")
    return cone


def minkowski_sum_closed(a: UpperSet, b: UpperSet) -> UpperSet:
    """``cl(a + b)``: thresholds add, and the empty set absorbs."""
    cone = _check_same_cone(a, b)
    with np.errstate(invalid="ignore"):
        v = a.thresholds + b.thresholds
    v[(a.thresholds == np.inf) | (b.thresholds == np.inf)] = np.inf
    return UpperSet(cone, v)


def _threshold_difference(va: float, vb: float) -> float:
    if vb == np.inf:
        return -np.inf
    if va == np.inf:
        return np.inf
    if vb == -np.inf:
        return -np.inf if va == -np.inf else np.inf
    return va - vb


def zeta_difference(a: UpperSet, b: UpperSet, k: int) -> HalfSpace:
    """``a -_ζ b`` for the base direction ``ζ = ζ_k``.

    ``{z : ζ·z + inf_b ζ·b ≥ inf_a ζ·a}``, a half-space, the empty set,
    or the whole space.
    """
    cone = _check_same_cone(a, b)
    return HalfSpace(cone.base_grid[k], _threshold_difference(a.thresholds[k], b.thresholds[k]))


def lattice_inf(sets: Iterable[UpperSet]) -> UpperSet:
    """Closure of the union: the pointwise minimum of thresholds."""
    sets = list(sets)
    if not sets:
        raise UsageError("lattice_inf of an empty collection")
    cone = _check_same_cone(*sets)
    return UpperSet(cone, np.min([s.thresholds for s in sets], axis=0))


def lattice_sup(sets: Iterable[UpperSet]) -> UpperSet:
    """Intersection: the pointwise maximum of thresholds.

    Exact when each input is a half-space along one base direction (plus
    ``C``); otherwise an outer approximation of the true intersection.
    """
    sets = list(sets)
    if not sets:
        raise UsageError("lattice_sup of an empty collection")
    cone = _check_same_cone(*sets)
    return UpperSet(cone, np.max([s.thresholds for s in sets], axis=0))


def includes(a: UpperSet, b: UpperSet, tol: float = 0.0) -> bool:
    """``a ⊇ b`` up to ``tol`` in every direction."""
    _check_same_cone(a, b)
    if b.is_empty:
        return True
    return bool(np.all(a.thresholds <= b.thresholds + tol))


def linear_set(eta: Sequence[float], k, x: Sequence[float], cone: ConeSpec | None = None) -> HalfSpace:
    """The half-space valued linear map ``S_(η,ζ)(x) = {z : ζ·z ≥ η·x}``.

    ``k`` is a base index into ``cone`` or an explicit direction vector.
    """
    if cone is not None:
        zeta = cone.zeta(k)
    else:
        zeta = np.asarray(k, dtype=float)
        if zeta.ndim != 1:
            raise UsageError("linear_set needs a cone to resolve a base index")
    eta = np.atleast_1d(np.asarray(eta, dtype=float))
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if eta.shape != x.shape:
        raise UsageError("η and x must have the same length")
    return HalfSpace(zeta, float(eta @ x))
