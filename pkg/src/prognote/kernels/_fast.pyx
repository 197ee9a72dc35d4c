# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: layer norm, masked softmax, GELU, Adam.

Same math as ``prognote.kernels.pure``; loops accumulate in double
precision regardless of the array dtype.  Callers preallocate outputs
(see ``prognote.kernels.compiled`` for the allocating wrappers).
"""

from libc.math cimport erf, exp, sqrt, pow, INFINITY

ctypedef fused real:
    float
    double

cdef double INV_SQRT2 = 0.7071067811865476
cdef double INV_SQRT_2PI = 0.3989422804014327


def layer_norm_fwd(real[:, ::1] x, real[::1] gamma, real[::1] beta,
                   double eps, real[:, ::1] y, real[::1] mean, real[::1] rstd):
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t cols = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double acc, mu, var, rs, xhat
    for i in range(rows):
        acc = 0.0
        for j in range(cols):
            acc += x[i, j]
        mu = acc / cols
        acc = 0.0
        for j in range(cols):
            acc += (x[i, j] - mu) * (x[i, j] - mu)
        var = acc / cols
        rs = 1.0 / sqrt(var + eps)
        mean[i] = <real> mu
        rstd[i] = <real> rs
        for j in range(cols):
            xhat = (x[i, j] - mu) * rs
            y[i, j] = <real> (xhat * gamma[j] + beta[j])


def layer_norm_bwd(real[:, ::1] dy, real[:, ::1] x, real[::1] gamma,
                   real[::1] mean, real[::1] rstd,
                   real[:, ::1] dx, real[::1] dgamma, real[::1] dbeta):
    cdef Py_ssize_t rows = x.shape[0]
    cdef Py_ssize_t cols = x.shape[1]
    cdef Py_ssize_t i, j
    cdef double mu, rs, xhat, dxh, m1, m2
    for j in range(cols):
        dgamma[j] = 0.0
        dbeta[j] = 0.0
    for i in range(rows):
        mu = mean[i]
        rs = rstd[i]
        m1 = 0.0
        m2 = 0.0
        for j in range(cols):
            xhat = (x[i, j] - mu) * rs
            dxh = dy[i, j] * gamma[j]
            dgamma[j] += <real> (dy[i, j] * xhat)
            dbeta[j] += dy[i, j]
            m1 += dxh
            m2 += dxh * xhat
        m1 /= cols
        m2 /= cols
        for j in range(cols):
            xhat = (x[i, j] - mu) * rs
            dxh = dy[i, j] * gamma[j]
            dx[i, j] = <real> ((dxh - m1 - xhat * m2) * rs)


def masked_softmax_fwd(real[:, :, :, ::1] scores, real[:, ::1] key_mask,
                       real[:, :, :, ::1] out):
    cdef Py_ssize_t nb = scores.shape[0]
    cdef Py_ssize_t na = scores.shape[1]
    cdef Py_ssize_t nq = scores.shape[2]
    cdef Py_ssize_t nk = scores.shape[3]
    cdef Py_ssize_t b, a, q, k
    cdef double rowmax, denom, e
    for b in range(nb):
        for a in range(na):
            for q in range(nq):
                rowmax = -INFINITY
                for k in range(nk):
                    if key_mask[b, k] > 0 and scores[b, a, q, k] > rowmax:
                        rowmax = scores[b, a, q, k]
                denom = 0.0
                for k in range(nk):
                    if key_mask[b, k] > 0:
                        e = exp(scores[b, a, q, k] - rowmax)
                        out[b, a, q, k] = <real> e
                        denom += e
                    else:
                        out[b, a, q, k] = 0.0
                for k in range(nk):
                    out[b, a, q, k] = <real> (out[b, a, q, k] / denom)


def masked_softmax_bwd(real[:, :, :, ::1] dprobs, real[:, :, :, ::1] probs,
                       real[:, :, :, ::1] out):
    cdef Py_ssize_t nb = probs.shape[0]
    cdef Py_ssize_t na = probs.shape[1]
    cdef Py_ssize_t nq = probs.shape[2]
    cdef Py_ssize_t nk = probs.shape[3]
    cdef Py_ssize_t b, a, q, k
    cdef double inner
    for b in range(nb):
        for a in range(na):
            for q in range(nq):
                inner = 0.0
                for k in range(nk):
                    inner += dprobs[b, a, q, k] * probs[b, a, q, k]
                for k in range(nk):
                    out[b, a, q, k] = <real> (probs[b, a, q, k]
                                              * (dprobs[b, a, q, k] - inner))


def gelu_fwd(real[::1] x, real[::1] y):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef double v
    for i in range(n):
        v = x[i]
        y[i] = <real> (0.5 * v * (1.0 + erf(v * INV_SQRT2)))


def gelu_bwd(real[::1] x, real[::1] dy, real[::1] dx):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef double v, cdf, pdf
    for i in range(n):
        v = x[i]
        cdf = 0.5 * (1.0 + erf(v * INV_SQRT2))
        pdf = exp(-0.5 * v * v) * INV_SQRT_2PI
        dx[i] = <real> (dy[i] * (cdf + v * pdf))


def adam_update(real[::1] param, real[::1] grad, real[::1] m, real[::1] v,
                long t, double lr, double beta1, double beta2, double eps):
    cdef Py_ssize_t n = param.shape[0]
    cdef Py_ssize_t i
    cdef double c1 = 1.0 - pow(beta1, t)
    cdef double c2 = 1.0 - pow(beta2, t)
    cdef double mi, vi
    for i in range(n):
        mi = beta1 * m[i] + (1.0 - beta1) * grad[i]
        vi = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i]
        m[i] = <real> mi
        v[i] = <real> vi
        param[i] -= <real> (lr * (mi / c1) / (sqrt(vi / c2) + eps))
