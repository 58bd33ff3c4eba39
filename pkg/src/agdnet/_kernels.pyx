# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled depthwise 3x3 kernels; same contract as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def dwconv3x3_forward(const double[:, :, ::1] x, const double[:, :, ::1] w):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], wd = x.shape[2]
    out_arr = np.zeros((c, h, wd), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t k, m, n, a, b, i, j
    cdef double acc
    with nogil:
        for k in range(c):
            for m in range(h):
                for n in range(wd):
                    acc = 0.0
                    for a in range(3):
                        i = m + a - 1
                        if i < 0 or i >= h:
                            continue
                        for b in range(3):
                            j = n + b - 1
                            if j < 0 or j >= wd:
                                continue
                            acc = acc + w[k, a, b] * x[k, i, j]
                    out[k, m, n] = acc
    return out_arr


def dwconv3x3_grad_input(const double[:, :, ::1] g, const double[:, :, ::1] w):
    cdef Py_ssize_t c = g.shape[0], h = g.shape[1], wd = g.shape[2]
    gx_arr = np.zeros((c, h, wd), dtype=np.float64)
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t k, m, n, a, b, i, j
    cdef double acc
    with nogil:
        for k in range(c):
            for m in range(h):
                for n in range(wd):
                    acc = 0.0
                    for a in range(3):
                        i = m - a + 1
                        if i < 0 or i >= h:
                            continue
                        for b in range(3):
                            j = n - b + 1
                            if j < 0 or j >= wd:
                                continue
                            acc = acc + w[k, a, b] * g[k, i, j]
                    gx[k, m, n] = acc
    return gx_arr


def dwconv3x3_grad_weight(const double[:, :, ::1] g, const double[:, :, ::1] x):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], wd = x.shape[2]
    xp_arr = np.zeros((c, h + 2, wd + 2), dtype=np.float64)
    xp_arr[:, 1:-1, 1:-1] = x
    cdef const double[:, :, ::1] xp = xp_arr
    gw_arr = np.zeros((c, 3, 3), dtype=np.float64)
    cdef double[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t k, m, n
    cdef double gv, s00, s01, s02, s10, s11, s12, s20, s21, s22
    with nogil:
        for k in range(c):
            # one pass over g with nine independent sums
            s00 = s01 = s02 = s10 = s11 = s12 = s20 = s21 = s22 = 0.0
            for m in range(h):
                for n in range(wd):
                    gv = g[k, m, n]
                    s00 = s00 + gv * xp[k, m, n]
                    s01 = s01 + gv * xp[k, m, n + 1]
                    s02 = s02 + gv * xp[k, m, n + 2]
                    s10 = s10 + gv * xp[k, m + 1, n]
                    s11 = s11 + gv * xp[k, m + 1, n + 1]
                    s12 = s12 + gv * xp[k, m + 1, n + 2]
                    s20 = s20 + gv * xp[k, m + 2, n]
                    s21 = s21 + gv * xp[k, m + 2, n + 1]
                    s22 = s22 + gv * xp[k, m + 2, n + 2]
            gw[k, 0, 0] = s00
            gw[k, 0, 1] = s01
            gw[k, 0, 2] = s02
            gw[k, 1, 0] = s10
            gw[k, 1, 1] = s11
            gw[k, 1, 2] = s12
            gw[k, 2, 0] = s20
            gw[k, 2, 1] = s21
            gw[k, 2, 2] = s22
    return gw_arr
