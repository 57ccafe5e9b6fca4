"""Finite-difference and quadrature weight construction on 1-D node lines.

Derivative operators are dense N x N matrices: central stencils of the
requested order in the interior, one-sided stencils of the same order in
the boundary layer.  Weights come from solving the local Vandermonde
system, so they are exact for polynomials up to the stencil degree.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import GridError


def _vandermonde_weights(offsets: np.ndarray) -> np.ndarray:
    """First-derivative weights for nodes at integer offsets (unit spacing)."""
    p = len(offsets)
    v = np.vander(offsets.astype(float), p, increasing=True).T
    rhs = np.zeros(p)
    rhs[1] = 1.0
    return np.linalg.solve(v, rhs)


@lru_cache(maxsize=128)
def diff_matrix(n: int, order: int) -> np.ndarray:
    """Derivative matrix for n unit-spaced nodes; divide by h after applying.

    order 2 uses 3-point stencils, order 4 uses 5-point stencils.
    """
    if order not in (2, 4):
        raise GridError(f"stencil order must be 2 or 4, got {order}")
    width = order + 1
    half = order // 2
    if n < width:
        raise GridError(f"need at least {width} nodes for order-{order} stencils, got {n}")
    d = np.zeros((n, n))
    for i in range(n):
        lo = min(max(i - half, 0), n - width)
        offs = np.arange(lo, lo + width) - i
        d[i, lo:lo + width] = _vandermonde_weights(offs)
    return d


def apply_derivative(values: np.ndarray, axis: int, h: float, order: int) -> np.ndarray:
    """Differentiate a sampled field along one grid axis."""
    n = values.shape[axis]
    d = diff_matrix(n, order)
    moved = np.moveaxis(values, axis, 0)
    out = np.tensordot(d, moved, axes=(1, 0)) / h
    return np.moveaxis(out, 0, axis)


@lru_cache(maxsize=128)
def simpson_weights(n: int) -> np.ndarray:
    """Composite Simpson weights for n unit-spaced nodes.

    Even interval counts use the classic 1,4,2,...,4,1 pattern; odd counts
    finish with a Simpson 3/8 block so degree-3 exactness is kept.
    """
    if n < 3:
        raise GridError(f"Simpson quadrature needs at least 3 nodes, got {n}")
    w = np.zeros(n)
    intervals = n - 1
    if intervals % 2 == 0:
        w[0] = w[-1] = 1.0 / 3.0
        w[1:-1:2] = 4.0 / 3.0
        w[2:-2:2] = 2.0 / 3.0
    elif n == 4:
        w[:] = np.array([3.0, 9.0, 9.0, 3.0]) / 8.0
    else:
        # 3/8 block on the last three intervals, classic rule before it
        m = n - 3
        w[:m] = simpson_weights(m)
        w[m - 1] += 3.0 / 8.0
        w[m:] += np.array([9.0 / 8.0, 9.0 / 8.0, 3.0 / 8.0])
    return w


def quadrature_weights(n: int, h: float) -> np.ndarray:
    return simpson_weights(n) * h
