"""Reference numpy implementation of the hot kernels.

These are the exact formulas the compiled backend mirrors.  The masked
softmax normalizer is accumulated sequentially (via the last cumsum
element) rather than with numpy's pairwise-blocked sum, so appending
masked pad keys to a row can never change the quotient bits.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def layer_norm_fwd(x, gamma, beta, eps):
    """Normalize rows of ``x`` to zero mean, unit variance, then affine.

    Returns (y, mean, rstd); mean and rstd are cached for the backward
    pass.  Variance is the biased estimator.
    """
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    return xhat * gamma + beta, mean, rstd


def layer_norm_bwd(dy, x, gamma, mean, rstd):
    """Gradients of layer_norm_fwd; returns (dx, dgamma, dbeta)."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    return dx, dgamma, dbeta


def masked_softmax_fwd(scores, key_mask):
    """Row softmax over the last axis with masked keys forced to zero.

    ``scores`` is (B, A, Q, K); ``key_mask`` is (B, K) with 1 for real
    keys.  Every row must keep at least one real key.
    """
    valid = key_mask[:, None, None, :] > 0
    shifted = np.where(valid, scores, -np.inf)
    rowmax = shifted.max(axis=-1, keepdims=True)
    expd = np.exp(shifted - rowmax)
    denom = np.cumsum(expd, axis=-1)[..., -1:]
    return expd / denom


def masked_softmax_bwd(dprobs, probs):
    """Jacobian-vector product of the softmax rows."""
    inner = np.sum(dprobs * probs, axis=-1, keepdims=True)
    return probs * (dprobs - inner)


def gelu_fwd(x):
    """Exact GELU using the Gaussian CDF."""
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_bwd(x, dy):
    """Derivative of exact GELU times the upstream gradient."""
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dy * (cdf + x * pdf)


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One in-place Adam step with standard bias correction.

    ``t`` is the 1-based step count after this update.  All four arrays
    are modified in place.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    param -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
