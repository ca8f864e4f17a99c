"""Fixed composite Gauss-Legendre rules.

The rule is deliberately non-adaptive: the same interval always yields the
same nodes, so every value computed downstream is bit-reproducible.
"""

from functools import lru_cache

import numpy as np

DEFAULT_ORDER = 8
DEFAULT_PANELS = 32


@lru_cache(maxsize=None)
def _reference_rule(order):
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_rule(a, b, panels=DEFAULT_PANELS, order=DEFAULT_ORDER):
    """Nodes and weights of the composite rule on ``[a, b]`` (read-only arrays).

    The error for a smooth integrand is ``O(h^(2*order))`` in the panel
    width ``h``; with the default 8-point rule that is far below the
    tolerances used anywhere in the package.
    """
    return _composite_rule(float(a), float(b), int(panels), int(order))


@lru_cache(maxsize=4096)
def _composite_rule(a, b, panels, order):
    x, w = _reference_rule(order)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).reshape(-1)
    weights = (half[:, None] * w[None, :]).reshape(-1)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def integrate(f, a, b, panels=DEFAULT_PANELS, order=DEFAULT_ORDER):
    """``∫_a^b f(s) ds`` for a vectorized ``f`` returning shape ``(len(s), ...)``."""
    if a == b:
        return np.zeros_like(np.asarray(f(np.array([a]))[0], dtype=float))
    nodes, weights = composite_rule(a, b, panels, order)
    vals = np.asarray(f(nodes), dtype=float)
    return np.tensordot(weights, vals, axes=(0, 0))
