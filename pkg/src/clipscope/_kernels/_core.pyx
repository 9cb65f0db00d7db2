# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels.

API-identical to the pure-numpy lane; each function is tested for agreement
with it.  Row-wise passes are fused into single loops so small desk-scale
shapes don't pay per-op numpy dispatch overhead.  matmul stays on BLAS —
a hand-rolled triple loop would be slower, not faster.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, sqrt, floor

cnp.import_array()

GELU_SLOPE = 1.702
cdef double _SLOPE = 1.702


def matmul(a, b):
    return np.dot(a, b)


def softmax_rows(object x):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t n = xa.shape[0], m = xa.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] xv = xa
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    cdef double mx, s, e
    for i in range(n):
        mx = xv[i, 0]
        for j in range(1, m):
            if xv[i, j] > mx:
                mx = xv[i, j]
        s = 0.0
        for j in range(m):
            e = exp(xv[i, j] - mx)
            ov[i, j] = e
            s += e
        for j in range(m):
            ov[i, j] /= s
    return out


def softmax_rows_grad(object y, object gy):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ya = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ga = np.ascontiguousarray(gy, dtype=np.float64)
    cdef Py_ssize_t n = ya.shape[0], m = ya.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] yv = ya
    cdef double[:, ::1] gv = ga
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(m):
            dot += gv[i, j] * yv[i, j]
        for j in range(m):
            ov[i, j] = yv[i, j] * (gv[i, j] - dot)
    return out


def layer_norm(object x, object gain, object bias, double eps):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.ascontiguousarray(gain, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] b = np.ascontiguousarray(bias, dtype=np.float64)
    cdef Py_ssize_t n = xa.shape[0], m = xa.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.empty((n, m), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] mean = np.empty((n, 1), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] rstd = np.empty((n, 1), dtype=np.float64)
    cdef double[:, ::1] xv = xa
    cdef double[:, ::1] yv = y
    cdef double[::1] gv = g
    cdef double[::1] bv = b
    cdef double[:, ::1] mv = mean
    cdef double[:, ::1] rv = rstd
    cdef Py_ssize_t i, j
    cdef double mu, var, d, r
    for i in range(n):
        mu = 0.0
        for j in range(m):
            mu += xv[i, j]
        mu /= m
        var = 0.0
        for j in range(m):
            d = xv[i, j] - mu
            var += d * d
        var /= m
        r = 1.0 / sqrt(var + eps)
        mv[i, 0] = mu
        rv[i, 0] = r
        for j in range(m):
            yv[i, j] = (xv[i, j] - mu) * r * gv[j] + bv[j]
    return y, mean, rstd


def layer_norm_grad(object x, object gain, object mean, object rstd, object gy):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] g = np.ascontiguousarray(gain, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ma = np.ascontiguousarray(mean, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ra = np.ascontiguousarray(rstd, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] ga = np.ascontiguousarray(gy, dtype=np.float64)
    cdef Py_ssize_t n = xa.shape[0], m = xa.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] gx = np.empty((n, m), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] ggain = np.zeros(m, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] gbias = np.zeros(m, dtype=np.float64)
    cdef double[:, ::1] xv = xa
    cdef double[::1] gv = g
    cdef double[:, ::1] mv = ma
    cdef double[:, ::1] rv = ra
    cdef double[:, ::1] gyv = ga
    cdef double[:, ::1] gxv = gx
    cdef double[::1] ggv = ggain
    cdef double[::1] gbv = gbias
    cdef Py_ssize_t i, j
    cdef double mu, r, xhat, gxhat, s1, s2
    for i in range(n):
        mu = mv[i, 0]
        r = rv[i, 0]
        s1 = 0.0
        s2 = 0.0
        for j in range(m):
            xhat = (xv[i, j] - mu) * r
            gxhat = gyv[i, j] * gv[j]
            s1 += gxhat
            s2 += gxhat * xhat
            ggv[j] += gyv[i, j] * xhat
            gbv[j] += gyv[i, j]
        for j in range(m):
            xhat = (xv[i, j] - mu) * r
            gxhat = gyv[i, j] * gv[j]
            gxv[i, j] = r / m * (m * gxhat - s1 - xhat * s2)
    return gx, ggain, gbias


def quick_gelu(object x):
    cdef cnp.ndarray xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray out = np.empty_like(xa)
    cdef double[::1] xv = xa.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = xv[i] / (1.0 + exp(-_SLOPE * xv[i]))
    return out


def quick_gelu_grad(object x, object gy):
    cdef cnp.ndarray xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray ga = np.ascontiguousarray(gy, dtype=np.float64)
    cdef cnp.ndarray out = np.empty_like(xa)
    cdef double[::1] xv = xa.ravel()
    cdef double[::1] gv = ga.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    cdef double s
    for i in range(n):
        s = 1.0 / (1.0 + exp(-_SLOPE * xv[i]))
        ov[i] = gv[i] * (s + xv[i] * _SLOPE * s * (1.0 - s))
    return out


def relu(object x):
    cdef cnp.ndarray xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray out = np.empty_like(xa)
    cdef double[::1] xv = xa.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = xv[i] if xv[i] > 0.0 else 0.0
    return out


def relu_grad(object x, object gy):
    cdef cnp.ndarray xa = np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray ga = np.ascontiguousarray(gy, dtype=np.float64)
    cdef cnp.ndarray out = np.empty_like(xa)
    cdef double[::1] xv = xa.ravel()
    cdef double[::1] gv = ga.ravel()
    cdef double[::1] ov = out.ravel()
    cdef Py_ssize_t i, n = xv.shape[0]
    for i in range(n):
        ov[i] = gv[i] if xv[i] > 0.0 else 0.0
    return out


def bilinear_resize(object grid, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] g = np.ascontiguousarray(grid, dtype=np.float64)
    cdef Py_ssize_t in_h = g.shape[0], in_w = g.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((out_h, out_w), dtype=np.float64)
    cdef double[:, ::1] gv = g
    cdef double[:, ::1] ov = out
    cdef double sy = in_h / <double>out_h
    cdef double sx = in_w / <double>out_w
    cdef Py_ssize_t i, j, y0, x0, y0c, y1c, x0c, x1c
    cdef double fy, fx, wy, wx, top, bot
    for i in range(out_h):
        fy = (i + 0.5) * sy - 0.5
        y0 = <Py_ssize_t>floor(fy)
        wy = fy - y0
        y0c = y0
        if y0c < 0: y0c = 0
        if y0c > in_h - 1: y0c = in_h - 1
        y1c = y0 + 1
        if y1c < 0: y1c = 0
        if y1c > in_h - 1: y1c = in_h - 1
        for j in range(out_w):
            fx = (j + 0.5) * sx - 0.5
            x0 = <Py_ssize_t>floor(fx)
            wx = fx - x0
            x0c = x0
            if x0c < 0: x0c = 0
            if x0c > in_w - 1: x0c = in_w - 1
            x1c = x0 + 1
            if x1c < 0: x1c = 0
            if x1c > in_w - 1: x1c = in_w - 1
            top = gv[y0c, x0c] * (1.0 - wx) + gv[y0c, x1c] * wx
            bot = gv[y1c, x0c] * (1.0 - wx) + gv[y1c, x1c] * wx
            ov[i, j] = top * (1.0 - wy) + bot * wy
    return out
