"""Pure numpy/scipy implementation of the stencil-sum kernel.

The weighted stencil sum is a cross-correlation with a fixed sparse
kernel, evaluated by FFT convolution over the whole grid at once.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve


def ball_sums(field: np.ndarray, offsets: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """out[x] = sum_k weights[k] * field[x + offsets[k]]; NaN near edges."""
    field = np.asarray(field, dtype=float)
    offsets = np.asarray(offsets, dtype=np.int64)
    weights = np.asarray(weights, dtype=float)
    m = field.ndim
    if offsets.ndim != 2 or offsets.shape[1] != m:
        raise ValueError(f"offsets must have shape (K, {m})")
    margins = np.abs(offsets).max(axis=0)

    kshape = tuple(2 * int(r) + 1 for r in margins)
    kernel = np.zeros(kshape)
    center = np.array([int(r) for r in margins])
    # convolution flips the kernel, so offset d is stored at center - d
    idx = (center[None, :] - offsets).T
    np.add.at(kernel, tuple(idx), weights)

    out = fftconvolve(field, kernel, mode="same")
    for axis, r in enumerate(margins):
        r = int(r)
        if r == 0:
            continue
        sl = [slice(None)] * m
        sl[axis] = slice(0, r)
        out[tuple(sl)] = np.nan
        sl[axis] = slice(field.shape[axis] - r, field.shape[axis])
        out[tuple(sl)] = np.nan
    if any(field.shape[a] - 2 * int(margins[a]) <= 0 for a in range(m)):
        out[:] = np.nan
    return out
