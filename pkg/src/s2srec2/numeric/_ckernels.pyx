# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Row-wise softmax and layer-norm kernels over 2-D float64 blocks.

Each function treats its input as ``rows x n`` (callers flatten leading
axes).  Loops run in a fixed order so results are reproducible run to run.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt

cnp.import_array()


def softmax_fwd(const double[:, ::1] x, const unsigned char[:, ::1] mask):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    cdef bint masked = mask.shape[0] > 0
    out_arr = np.zeros((rows, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double m, s, e
    cdef bint seen
    for i in range(rows):
        seen = False
        m = 0.0
        for j in range(n):
            if masked and not mask[i, j]:
                continue
            if not seen or x[i, j] > m:
                m = x[i, j]
                seen = True
        if not seen:
            raise ValueError(f"softmax row {i} is fully masked")
        s = 0.0
        for j in range(n):
            if masked and not mask[i, j]:
                continue
            e = exp(x[i, j] - m)
            out[i, j] = e
            s += e
        for j in range(n):
            out[i, j] = out[i, j] / s
    return out_arr


def softmax_bwd(const double[:, ::1] y, const double[:, ::1] gy):
    cdef Py_ssize_t rows = y.shape[0], n = y.shape[1], i, j
    out_arr = np.empty((rows, n), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef double dot
    for i in range(rows):
        dot = 0.0
        for j in range(n):
            dot += gy[i, j] * y[i, j]
        for j in range(n):
            out[i, j] = y[i, j] * (gy[i, j] - dot)
    return out_arr


def layernorm_fwd(const double[:, ::1] x, const double[::1] gamma,
                  const double[::1] beta, double eps):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1], i, j
    y_arr = np.empty((rows, n), dtype=np.float64)
    xhat_arr = np.empty((rows, n), dtype=np.float64)
    rstd_arr = np.empty(rows, dtype=np.float64)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    cdef double mean, var, d, r
    for i in range(rows):
        mean = 0.0
        for j in range(n):
            mean += x[i, j]
        mean /= n
        var = 0.0
        for j in range(n):
            d = x[i, j] - mean
            var += d * d
        var /= n
        r = 1.0 / sqrt(var + eps)
        rstd[i] = r
        for j in range(n):
            d = (x[i, j] - mean) * r
            xhat[i, j] = d
            y[i, j] = d * gamma[j] + beta[j]
    return y_arr, xhat_arr, rstd_arr


def layernorm_bwd(const double[:, ::1] gy, const double[:, ::1] xhat,
                  const double[::1] rstd, const double[::1] gamma):
    cdef Py_ssize_t rows = gy.shape[0], n = gy.shape[1], i, j
    gx_arr = np.empty((rows, n), dtype=np.float64)
    dgamma_arr = np.zeros(n, dtype=np.float64)
    dbeta_arr = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] gx = gx_arr
    cdef double[::1] dgamma = dgamma_arr
    cdef double[::1] dbeta = dbeta_arr
    cdef double mg, mgx, g
    for i in range(rows):
        mg = 0.0
        mgx = 0.0
        for j in range(n):
            g = gy[i, j] * gamma[j]
            mg += g
            mgx += g * xhat[i, j]
            dgamma[j] += gy[i, j] * xhat[i, j]
            dbeta[j] += gy[i, j]
        mg /= n
        mgx /= n
        for j in range(n):
            g = gy[i, j] * gamma[j]
            gx[i, j] = rstd[i] * (g - mg - xhat[i, j] * mgx)
    return gx_arr, dgamma_arr, dbeta_arr
