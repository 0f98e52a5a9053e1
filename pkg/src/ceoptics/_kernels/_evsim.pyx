# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled event-generation kernels.

Same per-pixel state machine as the numpy reference implementation;
floating-point expressions are kept literally identical so the two
backends produce bitwise-equal streams.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor

cnp.import_array()

DEF EPS = 1e-9


cdef inline long _count(double cur, double ref, double thresh) nogil:
    cdef double d = cur - ref
    cdef long mag = <long> floor(fabs(d) / thresh + EPS)
    return mag if d >= 0 else -mag


def stream_kernel(double[:, :, ::1] logl, double[::1] times, double thresh,
                  double refractory, double[:, ::1] l_ref, double[:, ::1] t_last):
    cdef Py_ssize_t n_frames = logl.shape[0]
    cdef Py_ssize_t n_rows = logl.shape[1]
    cdef Py_ssize_t n_cols = logl.shape[2]
    cdef Py_ssize_t cap = 4096
    cdef Py_ssize_t m = 0
    t_arr = np.empty(cap, dtype=np.float64)
    u_arr = np.empty(cap, dtype=np.int32)
    v_arr = np.empty(cap, dtype=np.int32)
    p_arr = np.empty(cap, dtype=np.int8)
    cdef double[::1] t_out = t_arr
    cdef int[::1] u_out = u_arr
    cdef cnp.int8_t[::1] p_out = p_arr
    cdef int[::1] v_out = v_arr

    cdef Py_ssize_t k, i, j, e
    cdef long n, mag
    cdef cnp.int8_t sgn
    cdef double prev, cur, ref, level, tt, dt, last

    for k in range(n_frames - 1):
        dt = times[k + 1] - times[k]
        for i in range(n_rows):
            for j in range(n_cols):
                cur = logl[k + 1, i, j]
                ref = l_ref[i, j]
                n = _count(cur, ref, thresh)
                if n != 0:
                    prev = logl[k, i, j]
                    mag = n if n > 0 else -n
                    sgn = 1 if n > 0 else -1
                    last = t_last[i, j]
                    for e in range(1, mag + 1):
                        level = ref + e * thresh * sgn
                        tt = times[k] + dt * (level - prev) / (cur - prev)
                        if refractory > 0.0:
                            if tt - last >= refractory:
                                last = tt
                            else:
                                continue
                        if m == cap:
                            cap *= 2
                            t_arr = np.concatenate([t_arr, np.empty(cap - m)])
                            u_arr = np.concatenate([u_arr, np.empty(cap - m, np.int32)])
                            v_arr = np.concatenate([v_arr, np.empty(cap - m, np.int32)])
                            p_arr = np.concatenate([p_arr, np.empty(cap - m, np.int8)])
                            t_out = t_arr
                            u_out = u_arr
                            v_out = v_arr
                            p_out = p_arr
                        t_out[m] = tt
                        u_out[m] = <int> i
                        v_out[m] = <int> j
                        p_out[m] = sgn
                        m += 1
                    if refractory > 0.0:
                        t_last[i, j] = last
                    l_ref[i, j] = ref + n * thresh
    return (t_arr[:m].copy(), u_arr[:m].copy(), v_arr[:m].copy(), p_arr[:m].copy())


def bin_kernel(double[:, :, ::1] logl, double[::1] times, double thresh,
               double refractory, double[:, ::1] l_ref, double[:, ::1] t_last,
               Py_ssize_t bin_size):
    cdef Py_ssize_t n_frames = logl.shape[0]
    cdef Py_ssize_t n_rows = logl.shape[1]
    cdef Py_ssize_t n_cols = logl.shape[2]
    cdef Py_ssize_t n_bins = (n_frames - 1) // bin_size
    cdef Py_ssize_t n_tr = n_bins * bin_size
    counts_arr = np.zeros((n_bins, n_rows, n_cols), dtype=np.int32)
    cdef int[:, :, ::1] counts = counts_arr

    cdef Py_ssize_t k, i, j, e, b
    cdef long n, mag, emitted
    cdef cnp.int8_t sgn
    cdef double prev, cur, ref, level, tt, dt, last

    for k in range(n_tr):
        b = k // bin_size
        dt = times[k + 1] - times[k]
        for i in range(n_rows):
            for j in range(n_cols):
                cur = logl[k + 1, i, j]
                ref = l_ref[i, j]
                n = _count(cur, ref, thresh)
                if n != 0:
                    if refractory > 0.0:
                        prev = logl[k, i, j]
                        mag = n if n > 0 else -n
                        sgn = 1 if n > 0 else -1
                        last = t_last[i, j]
                        emitted = 0
                        for e in range(1, mag + 1):
                            level = ref + e * thresh * sgn
                            tt = times[k] + dt * (level - prev) / (cur - prev)
                            if tt - last >= refractory:
                                last = tt
                                emitted += 1
                        t_last[i, j] = last
                        counts[b, i, j] += <int> (emitted * sgn)
                    else:
                        counts[b, i, j] += <int> n
                    l_ref[i, j] = ref + n * thresh
    return counts_arr
