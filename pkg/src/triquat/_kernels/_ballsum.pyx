# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Hot kernel: weighted stencil sums over every node of a 4-D grid.

Used by the concentration detector, where the same ball stencil is applied
at every grid node for several radii and several sequence members.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def ball_sums_4d(double[:, :, :, ::1] field,
                 long[:, ::1] offsets,
                 double[::1] weights):
    """out[x] = sum_k weights[k] * field[x + offsets[k]].

    Entries where the stencil would leave the array are NaN.
    """
    cdef Py_ssize_t n0 = field.shape[0]
    cdef Py_ssize_t n1 = field.shape[1]
    cdef Py_ssize_t n2 = field.shape[2]
    cdef Py_ssize_t n3 = field.shape[3]
    cdef Py_ssize_t nk = offsets.shape[0]
    cdef Py_ssize_t m0 = 0, m1 = 0, m2 = 0, m3 = 0
    cdef Py_ssize_t k, i0, i1, i2, i3
    cdef long o0, o1, o2, o3
    cdef double acc

    if offsets.shape[1] != 4:
        raise ValueError("offsets must have shape (K, 4)")

    for k in range(nk):
        o0 = offsets[k, 0]
        if o0 < 0: o0 = -o0
        if o0 > m0: m0 = o0
        o1 = offsets[k, 1]
        if o1 < 0: o1 = -o1
        if o1 > m1: m1 = o1
        o2 = offsets[k, 2]
        if o2 < 0: o2 = -o2
        if o2 > m2: m2 = o2
        o3 = offsets[k, 3]
        if o3 < 0: o3 = -o3
        if o3 > m3: m3 = o3

    out_arr = np.full((n0, n1, n2, n3), np.nan)
    cdef double[:, :, :, ::1] out = out_arr

    if n0 - 2 * m0 <= 0 or n1 - 2 * m1 <= 0 or n2 - 2 * m2 <= 0 or n3 - 2 * m3 <= 0:
        return out_arr

    for i0 in range(m0, n0 - m0):
        for i1 in range(m1, n1 - m1):
            for i2 in range(m2, n2 - m2):
                for i3 in range(m3, n3 - m3):
                    acc = 0.0
                    for k in range(nk):
                        acc += weights[k] * field[i0 + offsets[k, 0],
                                                  i1 + offsets[k, 1],
                                                  i2 + offsets[k, 2],
                                                  i3 + offsets[k, 3]]
                    out[i0, i1, i2, i3] = acc
    return out_arr
