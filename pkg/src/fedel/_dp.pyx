# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled windowed tensor-selection DP.

Semantics are identical to :func:`fedel._dp_py.window_select`; both fold the
objective in decreasing tensor order so the two paths agree bit for bit.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()


cdef inline bint _better(double v1, int c1, uint64_t m1,
                         double v2, int c2, uint64_t m2) noexcept nogil:
    if v1 != v2:
        return v1 > v2
    if c1 != c2:
        return c1 < c2
    return m1 > m2


def window_select(const int64_t[::1] w_units, const int64_t[::1] g_units,
                  const double[::1] importance, int64_t capacity):
    cdef Py_ssize_t n = w_units.shape[0]
    if n > 64:
        raise ValueError("compiled kernel handles at most 64 tensors per window")
    if capacity < 0 or n == 0:
        return 0

    cdef double[::1] dp_v = np.zeros(capacity + 1, dtype=np.float64)
    cdef int[::1] dp_c = np.zeros(capacity + 1, dtype=np.intc)
    cdef uint64_t[::1] dp_m = np.zeros(capacity + 1, dtype=np.uint64)

    cdef double best_v = 0.0, cv
    cdef int best_c = 0, cc
    cdef uint64_t best_m = 0, cm, bit
    cdef int64_t grad = 0, rem, w, c
    cdef Py_ssize_t e

    with nogil:
        for e in range(n - 1, -1, -1):
            if capacity - grad < 0:
                break
            bit = (<uint64_t>1) << e
            w = w_units[e]
            rem = capacity - grad - w
            if rem >= 0:
                cv = dp_v[rem] + importance[e]
                cc = dp_c[rem] + 1
                cm = dp_m[rem] | bit
                if _better(cv, cc, cm, best_v, best_c, best_m):
                    best_v = cv
                    best_c = cc
                    best_m = cm
            c = capacity
            while c >= w:
                cv = dp_v[c - w] + importance[e]
                cc = dp_c[c - w] + 1
                cm = dp_m[c - w] | bit
                if _better(cv, cc, cm, dp_v[c], dp_c[c], dp_m[c]):
                    dp_v[c] = cv
                    dp_c[c] = cc
                    dp_m[c] = cm
                c -= 1
            grad += g_units[e]
    return int(best_m)
