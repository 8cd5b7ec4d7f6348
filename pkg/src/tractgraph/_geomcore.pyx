# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled streamline-geometry kernels.

Reductions accumulate in sequential index order; the numpy fallback in
geometry.py pins the same order, so both backends produce bit-identical
results.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()

cdef enum:
    MDF = 0
    MCP = 1

METRIC_MDF = MDF
METRIC_MCP = MCP


def resample(double[:, ::1] pts, int p_out):
    """Resample a polyline to p_out points equally spaced by arc length."""
    cdef int n = pts.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((p_out, 3), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef double[::1] cum = np.empty(n, dtype=np.float64)
    cdef int i, j, idx
    cdef double dx, dy, dz, total, target, frac

    cum[0] = 0.0
    for i in range(1, n):
        dx = pts[i, 0] - pts[i - 1, 0]
        dy = pts[i, 1] - pts[i - 1, 1]
        dz = pts[i, 2] - pts[i - 1, 2]
        cum[i] = cum[i - 1] + sqrt(dx * dx + dy * dy + dz * dz)
    total = cum[n - 1]

    for j in range(3):
        o[0, j] = pts[0, j]
        o[p_out - 1, j] = pts[n - 1, j]
    if total == 0.0:
        for i in range(1, p_out - 1):
            for j in range(3):
                o[i, j] = pts[0, j]
        return out

    idx = 0
    for i in range(1, p_out - 1):
        target = total * (<double>i / (p_out - 1))
        while idx < n - 2 and cum[idx + 1] <= target:
            idx += 1
        frac = (target - cum[idx]) / (cum[idx + 1] - cum[idx])
        for j in range(3):
            o[i, j] = pts[idx, j] + frac * (pts[idx + 1, j] - pts[idx, j])
    return out


cdef double _mdf(double[:, :, ::1] a, Py_ssize_t ia, double[:, :, ::1] b, Py_ssize_t ib, int p) nogil:
    cdef double direct = 0.0, flip = 0.0, dx, dy, dz
    cdef int i
    for i in range(p):
        dx = a[ia, i, 0] - b[ib, i, 0]
        dy = a[ia, i, 1] - b[ib, i, 1]
        dz = a[ia, i, 2] - b[ib, i, 2]
        direct += sqrt(dx * dx + dy * dy + dz * dz)
        dx = a[ia, i, 0] - b[ib, p - 1 - i, 0]
        dy = a[ia, i, 1] - b[ib, p - 1 - i, 1]
        dz = a[ia, i, 2] - b[ib, p - 1 - i, 2]
        flip += sqrt(dx * dx + dy * dy + dz * dz)
    if flip < direct:
        direct = flip
    return direct / p


cdef double _mcp(double[:, :, ::1] a, Py_ssize_t ia, double[:, :, ::1] b, Py_ssize_t ib, int p) nogil:
    cdef double fwd = 0.0, rev = 0.0, best, d, dx, dy, dz
    cdef int i, j
    for i in range(p):
        best = -1.0
        for j in range(p):
            dx = a[ia, i, 0] - b[ib, j, 0]
            dy = a[ia, i, 1] - b[ib, j, 1]
            dz = a[ia, i, 2] - b[ib, j, 2]
            d = sqrt(dx * dx + dy * dy + dz * dz)
            if best < 0.0 or d < best:
                best = d
        fwd += best
    for j in range(p):
        best = -1.0
        for i in range(p):
            dx = b[ib, j, 0] - a[ia, i, 0]
            dy = b[ib, j, 1] - a[ia, i, 1]
            dz = b[ib, j, 2] - a[ia, i, 2]
            d = sqrt(dx * dx + dy * dy + dz * dz)
            if best < 0.0 or d < best:
                best = d
        rev += best
    return 0.5 * (fwd / p + rev / p)


cdef double _pair(double[:, :, ::1] a, Py_ssize_t a0, Py_ssize_t a1,
                  double[:, :, ::1] b, Py_ssize_t b0, Py_ssize_t b1,
                  int p, int metric) nogil:
    """Mean streamline distance over all pairs, accumulated in row-major order."""
    cdef double acc = 0.0
    cdef Py_ssize_t i, j
    for i in range(a0, a1):
        for j in range(b0, b1):
            if metric == MDF:
                acc += _mdf(a, i, b, j, p)
            else:
                acc += _mcp(a, i, b, j, p)
    return acc / ((a1 - a0) * (b1 - b0))


def pair_distance(double[:, :, ::1] a, double[:, :, ::1] b, int metric):
    """Mean pairwise streamline distance between two resampled bundles."""
    cdef int p = a.shape[1]
    return _pair(a, 0, a.shape[0], b, 0, b.shape[0], p, metric)


def distance_matrix(double[:, :, ::1] data, cnp.int64_t[::1] offsets, int metric):
    """Symmetric cluster distance matrix from concatenated resampled bundles.

    data holds all streamlines back to back; offsets[c]..offsets[c+1] is the
    slice of cluster c. Entries are computed for i < j and mirrored.
    """
    cdef Py_ssize_t n = offsets.shape[0] - 1
    cdef int p = data.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double d
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                d = _pair(data, offsets[i], offsets[i + 1], data, offsets[j], offsets[j + 1], p, metric)
                o[i, j] = d
                o[j, i] = d
    return out
