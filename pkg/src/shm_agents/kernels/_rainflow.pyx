# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled four-point rainflow counting.

Mirrors kernels.rainflow_py exactly; the stack walk is the one loop in the
package that CPython interpretation dominates on long stress histories.
"""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def count_cycles(cnp.float64_t[:] turning):
    cdef Py_ssize_t n = turning.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] stack = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_range = np.empty(n + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_mean = np.empty(n + 1, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_count = np.empty(n + 1, dtype=np.float64)
    cdef cnp.float64_t[:] st = stack
    cdef cnp.float64_t[:] orng = out_range
    cdef cnp.float64_t[:] omean = out_mean
    cdef cnp.float64_t[:] ocnt = out_count
    cdef Py_ssize_t top = 0, n_out = 0, i
    cdef double s1, s2, s3, s4, r_inner, r_left, r_right

    for i in range(n):
        st[top] = turning[i]
        top += 1
        while top >= 4:
            s1 = st[top - 4]
            s2 = st[top - 3]
            s3 = st[top - 2]
            s4 = st[top - 1]
            r_inner = s3 - s2
            if r_inner < 0:
                r_inner = -r_inner
            r_left = s2 - s1
            if r_left < 0:
                r_left = -r_left
            r_right = s4 - s3
            if r_right < 0:
                r_right = -r_right
            if r_inner <= r_left and r_inner <= r_right:
                orng[n_out] = r_inner
                omean[n_out] = 0.5 * (s2 + s3)
                ocnt[n_out] = 1.0
                n_out += 1
                st[top - 3] = s4
                top -= 2
            else:
                break
    for i in range(top - 1):
        s1 = st[i]
        s2 = st[i + 1]
        r_inner = s2 - s1
        if r_inner < 0:
            r_inner = -r_inner
        orng[n_out] = r_inner
        omean[n_out] = 0.5 * (s1 + s2)
        ocnt[n_out] = 0.5
        n_out += 1
    return (out_range[:n_out].copy(), out_mean[:n_out].copy(), out_count[:n_out].copy())
