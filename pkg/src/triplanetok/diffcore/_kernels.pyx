# cython: language_level=3, cdivision=True, initializedcheck=False
"""Fused row-wise kernels. Mirrors ``_kernels_py`` one function for one."""
import numpy as np
cimport cython
from libc.stdint cimport int64_t
from cython cimport floating
from libc.math cimport sqrt

NAME = "cython"
cdef double GELU_C = 0.7978845608028654  # sqrt(2/pi)


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _gelu_inner(floating[::1] x, floating[::1] u) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v
    for i in range(n):
        v = x[i]
        u[i] = <floating>(GELU_C * (v + 0.044715 * v * v * v))


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _gelu_out(floating[::1] x, floating[::1] t, floating[::1] y) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        y[i] = <floating>(0.5 * x[i] * (1.0 + t[i]))


def gelu_forward(x):
    # tanh itself goes through numpy's vectorised ufunc, which beats scalar libm
    flat = x.reshape(-1)
    y = np.empty_like(flat)
    t = np.empty_like(flat)
    if flat.dtype == np.float32:
        _gelu_inner[float](flat, t)
        np.tanh(t, out=t)
        _gelu_out[float](flat, t, y)
    else:
        _gelu_inner[double](flat, t)
        np.tanh(t, out=t)
        _gelu_out[double](flat, t, y)
    return y.reshape(x.shape), t.reshape(x.shape)


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _gelu_bwd(floating[::1] x, floating[::1] t, floating[::1] g, floating[::1] out) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    cdef double v, th, d
    for i in range(n):
        v = x[i]
        th = t[i]
        d = GELU_C * (1.0 + 3 * 0.044715 * v * v)
        out[i] = <floating>(g[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * d))


def gelu_backward(x, t, g):
    g = np.ascontiguousarray(g, dtype=x.dtype)
    out = np.empty_like(g)
    if x.dtype == np.float32:
        _gelu_bwd[float](x.reshape(-1), t.reshape(-1), g.reshape(-1), out.reshape(-1))
    else:
        _gelu_bwd[double](x.reshape(-1), t.reshape(-1), g.reshape(-1), out.reshape(-1))
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _shift_max(floating[:, ::1] x, floating[:, ::1] y) noexcept nogil:
    cdef Py_ssize_t r, j, R = x.shape[0], D = x.shape[1]
    cdef floating m
    for r in range(R):
        m = x[r, 0]
        for j in range(1, D):
            if x[r, j] > m:
                m = x[r, j]
        for j in range(D):
            y[r, j] = x[r, j] - m


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _normalize_rows(floating[:, ::1] y) noexcept nogil:
    cdef Py_ssize_t r, j, R = y.shape[0], D = y.shape[1]
    cdef double s
    for r in range(R):
        s = 0.0
        for j in range(D):
            s += y[r, j]
        s = 1.0 / s
        for j in range(D):
            y[r, j] = <floating>(y[r, j] * s)


def softmax_forward(x):
    D = x.shape[x.ndim - 1]
    x2 = x.reshape(-1, D)
    y = np.empty_like(x2)
    if x.dtype == np.float32:
        _shift_max[float](x2, y)
        np.exp(y, out=y)
        _normalize_rows[float](y)
    else:
        _shift_max[double](x2, y)
        np.exp(y, out=y)
        _normalize_rows[double](y)
    return y.reshape(x.shape)


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _softmax_bwd(floating[:, ::1] y, floating[:, ::1] g, floating[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t r, j, R = y.shape[0], D = y.shape[1]
    cdef double s
    for r in range(R):
        s = 0.0
        for j in range(D):
            s += g[r, j] * y[r, j]
        for j in range(D):
            out[r, j] = <floating>(y[r, j] * (g[r, j] - s))


def softmax_backward(y, g):
    D = y.shape[-1]
    g = np.ascontiguousarray(g, dtype=y.dtype)
    out = np.empty_like(g)
    if y.dtype == np.float32:
        _softmax_bwd[float](y.reshape(-1, D), g.reshape(-1, D), out.reshape(-1, D))
    else:
        _softmax_bwd[double](y.reshape(-1, D), g.reshape(-1, D), out.reshape(-1, D))
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _ln_fwd(floating[:, ::1] x, floating[::1] gain, floating[::1] bias, double eps,
                  floating[:, ::1] y, floating[:, ::1] xhat, floating[::1] rstd) noexcept nogil:
    cdef Py_ssize_t r, j, R = x.shape[0], D = x.shape[1]
    cdef double mu, var, c, rs
    for r in range(R):
        mu = 0.0
        for j in range(D):
            mu += x[r, j]
        mu /= D
        var = 0.0
        for j in range(D):
            c = x[r, j] - mu
            var += c * c
        var /= D
        rs = 1.0 / sqrt(var + eps)
        rstd[r] = <floating>rs
        for j in range(D):
            c = (x[r, j] - mu) * rs
            xhat[r, j] = <floating>c
            y[r, j] = <floating>(c * gain[j] + bias[j])


def layer_norm_forward(x, gain, bias, eps):
    D = x.shape[-1]
    x2 = x.reshape(-1, D)
    y = np.empty_like(x2)
    xhat = np.empty_like(x2)
    rstd = np.empty(x2.shape[0], dtype=x.dtype)
    gain = np.ascontiguousarray(gain, dtype=x.dtype)
    bias = np.ascontiguousarray(bias, dtype=x.dtype)
    if x.dtype == np.float32:
        _ln_fwd[float](x2, gain, bias, eps, y, xhat, rstd)
    else:
        _ln_fwd[double](x2, gain, bias, eps, y, xhat, rstd)
    return y.reshape(x.shape), xhat.reshape(x.shape), rstd.reshape(x.shape[:-1] + (1,))


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _ln_bwd(floating[:, ::1] g, floating[:, ::1] xhat, floating[::1] rstd, floating[::1] gain,
                  floating[:, ::1] gx, double[::1] ggain, double[::1] gbias) noexcept nogil:
    cdef Py_ssize_t r, j, R = g.shape[0], D = g.shape[1]
    cdef double a, b, gh
    for r in range(R):
        a = 0.0
        b = 0.0
        for j in range(D):
            gh = g[r, j] * gain[j]
            a += gh
            b += gh * xhat[r, j]
            ggain[j] += g[r, j] * xhat[r, j]
            gbias[j] += g[r, j]
        a /= D
        b /= D
        for j in range(D):
            gx[r, j] = <floating>(rstd[r] * (g[r, j] * gain[j] - a - xhat[r, j] * b))


def layer_norm_backward(g, xhat, rstd, gain):
    D = xhat.shape[-1]
    g = np.ascontiguousarray(g, dtype=xhat.dtype)
    gx = np.empty_like(g)
    ggain = np.zeros(D, dtype=np.float64)
    gbias = np.zeros(D, dtype=np.float64)
    gain = np.ascontiguousarray(gain, dtype=xhat.dtype)
    if xhat.dtype == np.float32:
        _ln_bwd[float](g.reshape(-1, D), xhat.reshape(-1, D), rstd.reshape(-1), gain, gx.reshape(-1, D), ggain, gbias)
    else:
        _ln_bwd[double](g.reshape(-1, D), xhat.reshape(-1, D), rstd.reshape(-1), gain, gx.reshape(-1, D), ggain, gbias)
    return gx, ggain.astype(xhat.dtype), gbias.astype(xhat.dtype)


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _gather(floating[:, ::1] table, int64_t[:, ::1] idx, floating[:, ::1] wts,
                  floating[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t k, j, K = idx.shape[1], D = table.shape[1]
    cdef Py_ssize_t i0, i1, i2, i3
    cdef floating w0, w1, w2, w3
    for k in range(K):
        i0 = idx[0, k]; i1 = idx[1, k]; i2 = idx[2, k]; i3 = idx[3, k]
        w0 = wts[0, k]; w1 = wts[1, k]; w2 = wts[2, k]; w3 = wts[3, k]
        for j in range(D):
            out[k, j] = w0 * table[i0, j] + w1 * table[i1, j] + w2 * table[i2, j] + w3 * table[i3, j]


def bilinear_gather(table, idx, wts):
    out = np.empty((idx.shape[1], table.shape[1]), dtype=table.dtype)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    wts = np.ascontiguousarray(wts, dtype=table.dtype)
    if table.dtype == np.float32:
        _gather[float](table, idx, wts, out)
    else:
        _gather[double](table, idx, wts, out)
    return out


@cython.boundscheck(False)
@cython.wraparound(False)
cdef void _scatter(floating[:, ::1] g, int64_t[:, ::1] idx, floating[:, ::1] wts,
                   floating[:, ::1] acc) noexcept nogil:
    cdef Py_ssize_t c, k, j, K = idx.shape[1], D = g.shape[1]
    cdef Py_ssize_t i
    cdef floating w
    for c in range(4):
        for k in range(K):
            i = idx[c, k]
            w = wts[c, k]
            for j in range(D):
                acc[i, j] += w * g[k, j]


def bilinear_scatter(g, idx, wts, rows):
    g = np.ascontiguousarray(g)
    acc = np.zeros((rows, g.shape[1]), dtype=g.dtype)
    idx = np.ascontiguousarray(idx, dtype=np.int64)
    wts = np.ascontiguousarray(wts, dtype=g.dtype)
    if g.dtype == np.float32:
        _scatter[float](g, idx, wts, acc)
    else:
        _scatter[double](g, idx, wts, acc)
    return acc
