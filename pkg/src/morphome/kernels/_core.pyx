# cython: language_level=3
"""Compiled row-wise kernels; must match morphome.kernels.reference exactly
(same formulas, reductions accumulated per row).

The unsafe directives are scoped to the typed loops: module-wide wraparound
removal would also strip negative-index handling from the Python-level
wrappers (e.g. shape[-1]) and read out of bounds.
"""

cimport cython

from libc.math cimport exp, expf, sqrt

import numpy as np
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _softmax_rows(real[:, ::1] x, real[:, ::1] y):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef real m, s
    with nogil:
        for i in range(n):
            m = x[i, 0]
            for j in range(1, d):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0
            for j in range(d):
                # single-precision exp for the float specialization; the
                # libm double exp costs ~5x there for no accuracy we keep
                if real is float:
                    y[i, j] = expf(x[i, j] - m)
                else:
                    y[i, j] = <real>exp(x[i, j] - m)
                s += y[i, j]
            for j in range(d):
                y[i, j] /= s


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _softmax_bwd_rows(real[:, ::1] y, real[:, ::1] dy, real[:, ::1] dx):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1]
    cdef Py_ssize_t i, j
    cdef real s
    with nogil:
        for i in range(n):
            s = 0
            for j in range(d):
                s += y[i, j] * dy[i, j]
            for j in range(d):
                dx[i, j] = y[i, j] * (dy[i, j] - s)


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _layernorm_rows(real[:, ::1] x, real[::1] gamma, real[::1] beta,
                    double eps, real[:, ::1] y, real[::1] mean, real[::1] rstd):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef real mu, var, r, dev
    with nogil:
        for i in range(n):
            mu = 0
            for j in range(d):
                mu += x[i, j]
            mu /= d
            var = 0
            for j in range(d):
                dev = x[i, j] - mu
                var += dev * dev
            var /= d
            r = <real>(1.0 / sqrt(var + eps))
            mean[i] = mu
            rstd[i] = r
            for j in range(d):
                y[i, j] = (x[i, j] - mu) * r * gamma[j] + beta[j]


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _layernorm_bwd_rows(real[:, ::1] x, real[::1] gamma, real[::1] mean,
                        real[::1] rstd, real[:, ::1] dy, real[:, ::1] dx,
                        double[::1] dgamma, double[::1] dbeta):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j
    cdef real xhat, dxhat, m1, m2
    with nogil:
        for i in range(n):
            m1 = 0
            m2 = 0
            for j in range(d):
                xhat = (x[i, j] - mean[i]) * rstd[i]
                dxhat = dy[i, j] * gamma[j]
                m1 += dxhat
                m2 += dxhat * xhat
                dgamma[j] += <double>(dy[i, j] * xhat)
                dbeta[j] += <double>dy[i, j]
            m1 /= d
            m2 /= d
            for j in range(d):
                xhat = (x[i, j] - mean[i]) * rstd[i]
                dxhat = dy[i, j] * gamma[j]
                dx[i, j] = rstd[i] * (dxhat - m1 - xhat * m2)


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _relu_fwd(real[::1] x, real[::1] y):
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            y[i] = x[i] if x[i] > 0 else 0


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _relu_bwd(real[::1] x, real[::1] dy, real[::1] dx):
    cdef Py_ssize_t i, n = x.shape[0]
    with nogil:
        for i in range(n):
            dx[i] = dy[i] if x[i] > 0 else 0


@cython.boundscheck(False)
@cython.wraparound(False)
@cython.cdivision(True)
def _adam(real[::1] p, real[::1] g, real[::1] m, real[::1] v,
          double lr, double beta1, double beta2, double eps,
          double bc1, double bc2):
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double mi, vi
    with nogil:
        for i in range(n):
            mi = beta1 * m[i] + (1.0 - beta1) * g[i]
            vi = beta2 * v[i] + (1.0 - beta2) * (<double>g[i] * <double>g[i])
            m[i] = <real>mi
            v[i] = <real>vi
            p[i] = <real>(p[i] - lr * (mi / bc1) / (sqrt(vi / bc2) + eps))


def _as2d(arr):
    a = np.ascontiguousarray(arr)
    return a, a.reshape(-1, a.shape[-1])


def softmax_forward(x):
    xc, x2 = _as2d(x)
    out = np.empty_like(x2)
    _softmax_rows(x2, out)
    return out.reshape(xc.shape)


def softmax_backward(y, dy):
    yc, y2 = _as2d(y)
    _, dy2 = _as2d(np.asarray(dy, dtype=y2.dtype))
    out = np.empty_like(y2)
    _softmax_bwd_rows(y2, dy2, out)
    return out.reshape(yc.shape)


def layernorm_forward(x, gamma, beta, eps=1e-5):
    xc, x2 = _as2d(x)
    g = np.ascontiguousarray(gamma, dtype=x2.dtype)
    b = np.ascontiguousarray(beta, dtype=x2.dtype)
    y = np.empty_like(x2)
    mean = np.empty(x2.shape[0], dtype=x2.dtype)
    rstd = np.empty(x2.shape[0], dtype=x2.dtype)
    _layernorm_rows(x2, g, b, eps, y, mean, rstd)
    lead = xc.shape[:-1]
    return y.reshape(xc.shape), mean.reshape(lead), rstd.reshape(lead)


def layernorm_backward(x, gamma, mean, rstd, dy):
    xc, x2 = _as2d(x)
    g = np.ascontiguousarray(gamma, dtype=x2.dtype)
    mean1 = np.ascontiguousarray(mean, dtype=x2.dtype).reshape(-1)
    rstd1 = np.ascontiguousarray(rstd, dtype=x2.dtype).reshape(-1)
    _, dy2 = _as2d(np.asarray(dy, dtype=x2.dtype))
    dx = np.empty_like(x2)
    dgamma = np.zeros(x2.shape[1], dtype=np.float64)
    dbeta = np.zeros(x2.shape[1], dtype=np.float64)
    _layernorm_bwd_rows(x2, g, mean1, rstd1, dy2, dx, dgamma, dbeta)
    return dx.reshape(xc.shape), dgamma.astype(x2.dtype), dbeta.astype(x2.dtype)


def relu_forward(x):
    xc = np.ascontiguousarray(x)
    flat = xc.reshape(-1)
    out = np.empty_like(flat)
    _relu_fwd(flat, out)
    return out.reshape(xc.shape)


def relu_backward(x, dy):
    xc = np.ascontiguousarray(x)
    flat = xc.reshape(-1)
    dyf = np.ascontiguousarray(dy, dtype=flat.dtype).reshape(-1)
    out = np.empty_like(flat)
    _relu_bwd(flat, dyf, out)
    return out.reshape(xc.shape)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, step):
    if not (param.flags.c_contiguous and m.flags.c_contiguous and v.flags.c_contiguous):
        raise ValueError("adam_update requires contiguous param/m/v buffers")
    p1 = param.reshape(-1)
    g1 = np.ascontiguousarray(grad, dtype=param.dtype).reshape(-1)
    m1 = m.reshape(-1)
    v1 = v.reshape(-1)
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    _adam(p1, g1, m1, v1, lr, beta1, beta2, eps, bc1, bc2)
