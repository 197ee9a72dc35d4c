"""Allocating wrappers around the Cython kernels.

Importing this module raises ImportError when the extension was not
built; the package selector treats that as "backend unavailable".
"""

from __future__ import annotations

import numpy as np

from . import _fast


def layer_norm_fwd(x, gamma, beta, eps):
    y = np.empty_like(x)
    mean = np.empty(x.shape[0], dtype=x.dtype)
    rstd = np.empty(x.shape[0], dtype=x.dtype)
    _fast.layer_norm_fwd(x, gamma, beta, float(eps), y, mean, rstd)
    return y, mean, rstd


def layer_norm_bwd(dy, x, gamma, mean, rstd):
    dx = np.empty_like(x)
    dgamma = np.empty(x.shape[1], dtype=x.dtype)
    dbeta = np.empty(x.shape[1], dtype=x.dtype)
    _fast.layer_norm_bwd(dy, x, gamma, mean, rstd, dx, dgamma, dbeta)
    return dx, dgamma, dbeta


def masked_softmax_fwd(scores, key_mask):
    out = np.empty_like(scores)
    _fast.masked_softmax_fwd(scores, key_mask, out)
    return out


def masked_softmax_bwd(dprobs, probs):
    out = np.empty_like(probs)
    _fast.masked_softmax_bwd(dprobs, probs, out)
    return out


def gelu_fwd(x):
    flat = np.ascontiguousarray(x).reshape(-1)
    y = np.empty_like(flat)
    _fast.gelu_fwd(flat, y)
    return y.reshape(x.shape)


def gelu_bwd(x, dy):
    flat_x = np.ascontiguousarray(x).reshape(-1)
    flat_dy = np.ascontiguousarray(dy).reshape(-1)
    dx = np.empty_like(flat_x)
    _fast.gelu_bwd(flat_x, flat_dy, dx)
    return dx.reshape(x.shape)


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    _fast.adam_update(
        param.reshape(-1),
        np.ascontiguousarray(grad).reshape(-1),
        m.reshape(-1),
        v.reshape(-1),
        int(t),
        float(lr),
        float(beta1),
        float(beta2),
        float(eps),
    )
