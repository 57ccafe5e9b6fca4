"""Backend selection for the hot stencil-sum kernel.

The compiled extension is preferred when it imported cleanly; setting
TRIQUAT_PURE_PYTHON=1 forces the numpy/FFT fallback.  Both backends share
one contract, covered by the equivalence tests and the benchmark.
"""

from __future__ import annotations

import os

import numpy as np

from . import _fallback

try:  # pragma: no cover - depends on the build
    from . import _ballsum as _compiled
except ImportError:  # pragma: no cover
    _compiled = None

FORCE_PYTHON = os.environ.get("TRIQUAT_PURE_PYTHON", "") == "1"
HAVE_COMPILED = _compiled is not None
BACKEND = "compiled" if (HAVE_COMPILED and not FORCE_PYTHON) else "python"


def available_backends() -> list[str]:
    return ["compiled", "python"] if HAVE_COMPILED else ["python"]


def ball_sums(field: np.ndarray, offsets: np.ndarray, weights: np.ndarray,
              backend: str | None = None) -> np.ndarray:
    """Weighted stencil sums at every node; NaN where the stencil clips.

    backend overrides the import-time selection ('compiled' or 'python').
    """
    choice = backend or BACKEND
    if choice == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernel requested but not built")
        if field.ndim == 4:
            return _compiled.ball_sums_4d(
                np.ascontiguousarray(field, dtype=float),
                np.ascontiguousarray(offsets, dtype=np.int64),
                np.ascontiguousarray(weights, dtype=float))
        choice = "python"  # compiled path is 4-D only
    if choice != "python":
        raise ValueError(f"unknown backend '{choice}'")
    return _fallback.ball_sums(field, offsets, weights)


def ball_stencil(h: tuple[float, ...], r: float) -> tuple[np.ndarray, np.ndarray]:
    """Offsets and weights of the ball indicator on an anisotropic grid.

    Nodes within h/2 of the sphere get half weight, matching the
    single-point density quadrature.
    """
    h = np.asarray(h, dtype=float)
    band = 0.5 * h.max()
    ranges = [np.arange(-int(np.ceil((r + band) / hk)), int(np.ceil((r + band) / hk)) + 1)
              for hk in h]
    mesh = np.meshgrid(*ranges, indexing="ij")
    offsets = np.stack([g.ravel() for g in mesh], axis=1)
    dist = np.sqrt(((offsets * h) ** 2).sum(axis=1))
    w = np.where(dist <= r - band, 1.0, np.where(dist < r + band, 0.5, 0.0))
    keep = w > 0
    return offsets[keep].astype(np.int64), w[keep]
