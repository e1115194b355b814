# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled forward and backward kernels for the encoder's elementwise and row-wise ops.

Signatures mirror ``_pykernels``. All arrays are C-contiguous float64 except
the key mask, which is uint8.
"""

import numpy as np
from libc.math cimport exp, fmin, sqrt

cdef double GELU_C = 0.7978845608028654  # sqrt(2/pi)


def layer_norm_forward(const double[:, ::1] x, const double[::1] gain,
                       const double[::1] bias, double eps):
    cdef Py_ssize_t R = x.shape[0], d = x.shape[1], i, j
    y_arr = np.empty((R, d))
    xhat_arr = np.empty((R, d))
    rstd_arr = np.empty(R)
    cdef double[:, ::1] y = y_arr
    cdef double[:, ::1] xhat = xhat_arr
    cdef double[::1] rstd = rstd_arr
    cdef double mu, var, c, r
    with nogil:
        for i in range(R):
            mu = 0.0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0.0
            for j in range(d):
                c = x[i, j] - mu
                var += c * c
            var /= d
            r = 1.0 / sqrt(var + eps)
            rstd[i] = r
            for j in range(d):
                c = (x[i, j] - mu) * r
                xhat[i, j] = c
                y[i, j] = c * gain[j] + bias[j]
    return y_arr, xhat_arr, rstd_arr


def layer_norm_backward(const double[:, ::1] dy, const double[:, ::1] xhat,
                        const double[::1] rstd, const double[::1] gain):
    cdef Py_ssize_t R = dy.shape[0], d = dy.shape[1], i, j
    dx_arr = np.empty((R, d))
    dgain_arr = np.zeros(d)
    dbias_arr = np.zeros(d)
    cdef double[:, ::1] dx = dx_arr
    cdef double[::1] dgain = dgain_arr
    cdef double[::1] dbias = dbias_arr
    cdef double sg, sgx, g
    with nogil:
        for i in range(R):
            sg = 0.0
            sgx = 0.0
            for j in range(d):
                g = dy[i, j] * gain[j]
                sg += g
                sgx += g * xhat[i, j]
                dgain[j] += dy[i, j] * xhat[i, j]
                dbias[j] += dy[i, j]
            sg /= d
            sgx /= d
            for j in range(d):
                g = dy[i, j] * gain[j]
                dx[i, j] = (g - sg - xhat[i, j] * sgx) * rstd[i]
    return dx_arr, dgain_arr, dbias_arr


def masked_softmax_forward(const double[:, :, ::1] scores, const unsigned char[:, ::1] mask):
    cdef Py_ssize_t B = scores.shape[0], R = scores.shape[1], K = scores.shape[2]
    cdef Py_ssize_t b, i, k
    out_arr = np.empty((B, R, K))
    keep_arr = np.empty(K)
    cdef double[:, :, ::1] out = out_arr
    cdef double[::1] keep = keep_arr
    cdef double m, s
    with nogil:
        for b in range(B):
            for k in range(K):
                keep[k] = 1.0 if mask[b, k] else 0.0
            for i in range(R):
                m = -1.0e308
                for k in range(K):
                    if mask[b, k] and scores[b, i, k] > m:
                        m = scores[b, i, k]
                # branch-free so the exp loop vectorizes; fmin guards masked keys above the max
                for k in range(K):
                    out[b, i, k] = exp(fmin(scores[b, i, k] - m, 0.0)) * keep[k]
                s = 0.0
                for k in range(K):
                    s += out[b, i, k]
                s = 1.0 / s
                for k in range(K):
                    out[b, i, k] *= s
    return out_arr


def masked_softmax_backward(const double[:, ::1] dp, const double[:, ::1] p):
    cdef Py_ssize_t R = dp.shape[0], K = dp.shape[1], i, k
    ds_arr = np.empty((R, K))
    cdef double[:, ::1] ds = ds_arr
    cdef double dot
    with nogil:
        for i in range(R):
            dot = 0.0
            for k in range(K):
                dot += dp[i, k] * p[i, k]
            for k in range(K):
                ds[i, k] = p[i, k] * (dp[i, k] - dot)
    return ds_arr


cdef inline double _tanh(double u) noexcept nogil:
    # exp-based; libm tanh does not vectorize
    return 1.0 - 2.0 / (exp(2.0 * fmin(u, 350.0)) + 1.0)


def gelu_forward(const double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double v
    with nogil:
        for i in range(n):
            v = x[i]
            out[i] = 0.5 * v * (1.0 + _tanh(GELU_C * (v + 0.044715 * v * v * v)))
    return out_arr


def gelu_backward(const double[::1] dy, const double[::1] x):
    cdef Py_ssize_t n = x.shape[0], i
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef double v, th
    with nogil:
        for i in range(n):
            v = x[i]
            th = _tanh(GELU_C * (v + 0.044715 * v * v * v))
            out[i] = dy[i] * (0.5 * (1.0 + th)
                              + 0.5 * v * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * v * v))
    return out_arr
