# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled compute kernels: P1 stiffness assembly and candidate-scan locate.

Contracts mirror ``_kernels_py``; see that module for parameter docs.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def stiffness_values(cnp.ndarray[cnp.float64_t, ndim=2] xs,
                     cnp.ndarray[cnp.float64_t, ndim=2] ys,
                     cnp.ndarray[cnp.float64_t, ndim=1] a11,
                     cnp.ndarray[cnp.float64_t, ndim=1] a22):
    cdef Py_ssize_t m = xs.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((m, 9))
    cdef double b0, b1, b2, c0, c1, c2, det, sa, sc
    cdef double b[3]
    cdef double c[3]
    cdef Py_ssize_t t, i, j
    for t in range(m):
        b[0] = ys[t, 1] - ys[t, 2]
        b[1] = ys[t, 2] - ys[t, 0]
        b[2] = ys[t, 0] - ys[t, 1]
        c[0] = xs[t, 2] - xs[t, 1]
        c[1] = xs[t, 0] - xs[t, 2]
        c[2] = xs[t, 1] - xs[t, 0]
        det = xs[t, 0] * b[0] + xs[t, 1] * b[1] + xs[t, 2] * b[2]
        sa = a11[t] / (2.0 * det)
        sc = a22[t] / (2.0 * det)
        for i in range(3):
            for j in range(3):
                out[t, 3 * i + j] = sa * b[i] * b[j] + sc * c[i] * c[j]
    return out


def locate_scan(cnp.ndarray[cnp.float64_t, ndim=1] px,
                cnp.ndarray[cnp.float64_t, ndim=1] py,
                cnp.ndarray[cnp.int64_t, ndim=1] cand_ptr,
                cnp.ndarray[cnp.int64_t, ndim=1] cand_tri,
                cnp.ndarray[cnp.float64_t, ndim=2] tx,
                cnp.ndarray[cnp.float64_t, ndim=2] ty):
    cdef Py_ssize_t n = px.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] tri = np.full(n, -1, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] bary = np.zeros((n, 3))
    cdef Py_ssize_t p, k, t, best
    cdef double qx, qy, x1, x2, x3, y1, y2, y3, det, l1, l2, l3, score, best_score
    cdef double bl1, bl2, bl3
    for p in range(n):
        best = -1
        best_score = -1e300
        bl1 = bl2 = bl3 = 0.0
        qx = px[p]
        qy = py[p]
        for k in range(cand_ptr[p], cand_ptr[p + 1]):
            t = cand_tri[k]
            x1 = tx[t, 0]; x2 = tx[t, 1]; x3 = tx[t, 2]
            y1 = ty[t, 0]; y2 = ty[t, 1]; y3 = ty[t, 2]
            det = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3)
            l1 = ((y2 - y3) * (qx - x3) + (x3 - x2) * (qy - y3)) / det
            l2 = ((y3 - y1) * (qx - x3) + (x1 - x3) * (qy - y3)) / det
            l3 = 1.0 - l1 - l2
            score = l1
            if l2 < score:
                score = l2
            if l3 < score:
                score = l3
            if score > best_score:
                best_score = score
                best = t
                bl1 = l1; bl2 = l2; bl3 = l3
        if best >= 0:
            tri[p] = best
            bary[p, 0] = bl1
            bary[p, 1] = bl2
            bary[p, 2] = bl3
    return tri, bary
