# cython: language_level=3
"""Compiled per-point kernels. Semantics must match ``_pykernels`` bit for bit."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, llrint

cnp.import_array()

DEF FIXED_BITS = 40
cdef long long FIXED_ONE = 1LL << FIXED_BITS
cdef long long FIXED_MASK = FIXED_ONE - 1
cdef double FIXED_SCALE = <double>(1LL << FIXED_BITS)


def assign_points_to_boxes(const double[:, ::1] points, const double[:, ::1] boxes, double margin):
    """Index of the first box (in priority order) containing each point, -1 if none."""
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t nb = boxes.shape[0]
    cdef Py_ssize_t i, b
    cdef double dx, dy, dz, lx, ly
    out = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] res = out
    if nb == 0:
        return out
    with nogil:
        for i in range(n):
            for b in range(nb):
                dx = points[i, 0] - boxes[b, 0]
                dy = points[i, 1] - boxes[b, 1]
                dz = points[i, 2] - boxes[b, 2]
                lx = boxes[b, 3] * dx + boxes[b, 4] * dy
                ly = boxes[b, 3] * dy - boxes[b, 4] * dx
                if (fabs(lx) <= boxes[b, 5] + margin
                        and fabs(ly) <= boxes[b, 6] + margin
                        and fabs(dz) <= boxes[b, 7] + margin):
                    res[i] = b
                    break
    return out


def accumulate_cells(const cnp.int64_t[::1] cells, const double[::1] epe, const double[::1] disp, Py_ssize_t n_cells):
    """Per-cell counts and fixed-point (hi, lo) sums of ``epe`` and ``disp``."""
    cdef Py_ssize_t n = cells.shape[0]
    cdef Py_ssize_t i
    cdef cnp.int64_t c
    cdef long long q
    counts_a = np.zeros(n_cells, dtype=np.int64)
    epe_hi_a = np.zeros(n_cells, dtype=np.int64)
    epe_lo_a = np.zeros(n_cells, dtype=np.int64)
    disp_hi_a = np.zeros(n_cells, dtype=np.int64)
    disp_lo_a = np.zeros(n_cells, dtype=np.int64)
    cdef cnp.int64_t[::1] counts = counts_a
    cdef cnp.int64_t[::1] epe_hi = epe_hi_a
    cdef cnp.int64_t[::1] epe_lo = epe_lo_a
    cdef cnp.int64_t[::1] disp_hi = disp_hi_a
    cdef cnp.int64_t[::1] disp_lo = disp_lo_a
    with nogil:
        for i in range(n):
            c = cells[i]
            counts[c] += 1
            q = llrint(epe[i] * FIXED_SCALE)
            epe_hi[c] += q >> FIXED_BITS
            epe_lo[c] += q & FIXED_MASK
            if epe_lo[c] >= FIXED_ONE:
                epe_hi[c] += epe_lo[c] >> FIXED_BITS
                epe_lo[c] &= FIXED_MASK
            q = llrint(disp[i] * FIXED_SCALE)
            disp_hi[c] += q >> FIXED_BITS
            disp_lo[c] += q & FIXED_MASK
            if disp_lo[c] >= FIXED_ONE:
                disp_hi[c] += disp_lo[c] >> FIXED_BITS
                disp_lo[c] &= FIXED_MASK
    return counts_a, epe_hi_a, epe_lo_a, disp_hi_a, disp_lo_a
