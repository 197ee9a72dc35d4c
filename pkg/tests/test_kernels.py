import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prognote import kernels
from prognote.errors import ConfigError

BACKENDS = kernels.available_backends()


@pytest.fixture(params=BACKENDS)
def backend(request):
    kernels.use_backend(request.param)
    yield request.param
    kernels.use_backend(BACKENDS[0])


def _rand(shape, seed=0):
    return np.random.Generator(np.random.PCG64(seed)).standard_normal(shape)


class TestLayerNorm:
    def test_rows_are_standardized(self, backend):
        x = _rand((6, 16))
        y, mean, rstd = kernels.layer_norm_fwd(x, np.ones(16), np.zeros(16), 1e-12)
        np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(y.std(axis=1), 1.0, rtol=1e-9)

    def test_gamma_beta_apply(self, backend):
        x = _rand((3, 8), seed=4)
        gamma = np.full(8, 2.0)
        beta = np.full(8, -1.0)
        y, _, _ = kernels.layer_norm_fwd(x, gamma, beta, 1e-12)
        base, _, _ = kernels.layer_norm_fwd(x, np.ones(8), np.zeros(8), 1e-12)
        np.testing.assert_allclose(y, 2.0 * base - 1.0, rtol=1e-12)

    def test_backward_matches_finite_differences(self, backend):
        x = _rand((2, 6), seed=1)
        gamma = _rand(6, seed=2) + 2.0
        beta = _rand(6, seed=3)
        dy = _rand((2, 6), seed=5)
        _, mean, rstd = kernels.layer_norm_fwd(x, gamma, beta, 1e-12)
        dx, dgamma, dbeta = kernels.layer_norm_bwd(dy, x, gamma, mean, rstd)
        h = 1e-6
        for i in range(x.shape[0]):
            for j in range(x.shape[1]):
                xp = x.copy(); xp[i, j] += h
                xm = x.copy(); xm[i, j] -= h
                yp, _, _ = kernels.layer_norm_fwd(xp, gamma, beta, 1e-12)
                ym, _, _ = kernels.layer_norm_fwd(xm, gamma, beta, 1e-12)
                num = ((yp - ym) * dy).sum() / (2 * h)
                assert abs(num - dx[i, j]) < 1e-6


class TestMaskedSoftmax:
    def test_rows_sum_to_one_over_real_keys(self, backend):
        scores = _rand((2, 2, 4, 4))
        mask = np.array([[1, 1, 1, 0], [1, 1, 0, 0]], dtype=np.float64)
        probs = kernels.masked_softmax_fwd(scores, mask)
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-14)
        assert (probs[0, :, :, 3] == 0).all()
        assert (probs[1, :, :, 2:] == 0).all()

    def test_matches_plain_softmax_when_unmasked(self, backend):
        scores = _rand((1, 1, 3, 5), seed=9)
        mask = np.ones((1, 5))
        probs = kernels.masked_softmax_fwd(scores, mask)
        ref = np.exp(scores - scores.max(-1, keepdims=True))
        ref /= ref.sum(-1, keepdims=True)
        np.testing.assert_allclose(probs, ref, rtol=1e-13)

    def test_pad_extension_is_bit_exact(self, backend):
        """Adding padded keys must not change any real probability bit."""
        scores = _rand((1, 2, 4, 4), seed=7)
        mask = np.ones((1, 4))
        probs = kernels.masked_softmax_fwd(np.ascontiguousarray(scores), mask)
        wide_scores = np.zeros((1, 2, 6, 6))
        wide_scores[:, :, :4, :4] = scores
        wide_mask = np.zeros((1, 6))
        wide_mask[:, :4] = 1
        probs_wide = kernels.masked_softmax_fwd(
            np.ascontiguousarray(wide_scores), wide_mask
        )
        assert (probs_wide[:, :, :4, :4] == probs).all()

    def test_backward_is_jacobian_product(self, backend):
        scores = _rand((1, 1, 2, 3), seed=3)
        mask = np.ones((1, 3))
        probs = kernels.masked_softmax_fwd(scores, mask)
        dprobs = _rand((1, 1, 2, 3), seed=8)
        ds = kernels.masked_softmax_bwd(np.ascontiguousarray(dprobs), probs)
        # softmax jacobian: diag(p) - p p^T, applied row by row
        for q in range(2):
            p = probs[0, 0, q]
            jac = np.diag(p) - np.outer(p, p)
            np.testing.assert_allclose(ds[0, 0, q], jac @ dprobs[0, 0, q],
                                       rtol=1e-12, atol=1e-14)


class TestGelu:
    def test_known_values(self, backend):
        # exact-erf form: gelu(0) = 0, gelu(x) -> x for large x
        x = np.array([0.0, 10.0, -10.0, 1.0])
        y = kernels.gelu_fwd(x)
        assert y[0] == 0.0
        np.testing.assert_allclose(y[1], 10.0, atol=1e-12)
        np.testing.assert_allclose(y[2], 0.0, atol=1e-12)
        expected = 0.5 * (1 + math.erf(1 / math.sqrt(2)))
        np.testing.assert_allclose(y[3], expected, rtol=1e-14)

    def test_backward_matches_finite_differences(self, backend):
        x = np.linspace(-3, 3, 13)
        dy = np.ones_like(x)
        dx = kernels.gelu_bwd(x, dy)
        h = 1e-6
        num = (kernels.gelu_fwd(x + h) - kernels.gelu_fwd(x - h)) / (2 * h)
        np.testing.assert_allclose(dx, num, atol=1e-9)


class TestAdamUpdate:
    def test_single_step_by_hand(self, backend):
        param = np.array([1.0, -2.0])
        grad = np.array([0.5, 0.1])
        m = np.zeros(2)
        v = np.zeros(2)
        lr, b1, b2, eps = 1e-2, 0.9, 0.999, 1e-8
        kernels.adam_update(param, grad, m, v, 1, lr, b1, b2, eps)
        m_ref = 0.1 * grad
        v_ref = 0.001 * grad**2
        m_hat = m_ref / (1 - 0.9)
        v_hat = v_ref / (1 - 0.999)
        expected = np.array([1.0, -2.0]) - lr * m_hat / (np.sqrt(v_hat) + eps)
        np.testing.assert_allclose(param, expected, rtol=1e-12)
        np.testing.assert_allclose(m, m_ref, rtol=1e-12)
        np.testing.assert_allclose(v, v_ref, rtol=1e-12)


class TestCrossBackend:
    """Both implementations compute the same numbers."""

    needs_both = pytest.mark.skipif(
        len(BACKENDS) < 2, reason="compiled backend not built"
    )

    @needs_both
    def test_all_kernels_agree(self):
        x2 = _rand((8, 16), seed=11)
        gamma = _rand(16, seed=12) + 2
        beta = _rand(16, seed=13)
        scores = np.ascontiguousarray(_rand((2, 2, 5, 5), seed=14))
        mask = np.array([[1, 1, 1, 1, 0], [1, 1, 0, 0, 0]], dtype=np.float64)
        dy2 = _rand((8, 16), seed=15)

        outs = {}
        for name in BACKENDS:
            kernels.use_backend(name)
            y, mean, rstd = kernels.layer_norm_fwd(x2, gamma, beta, 1e-12)
            probs = kernels.masked_softmax_fwd(scores, mask)
            g = kernels.gelu_fwd(x2)
            dx, dgamma, dbeta = kernels.layer_norm_bwd(dy2, x2, gamma, mean, rstd)
            outs[name] = (y, mean, rstd, probs, g, dx, dgamma, dbeta)
        kernels.use_backend(BACKENDS[0])
        a, b = outs[BACKENDS[0]], outs[BACKENDS[1]]
        for u, v in zip(a, b):
            np.testing.assert_allclose(u, v, rtol=1e-13, atol=1e-14)

    @needs_both
    def test_env_override_rejects_unknown_backend(self):
        with pytest.raises(ConfigError):
            kernels.use_backend("fortran")


@given(arrays(np.float64, (3, 7),
              elements=st.floats(-50, 50, allow_nan=False)))
@settings(max_examples=100, deadline=None)
def test_softmax_rows_always_normalized(scores_2d):
    scores = scores_2d[None, None, :, :]
    mask = np.ones((1, 7))
    probs = kernels.masked_softmax_fwd(np.ascontiguousarray(scores), mask)
    np.testing.assert_allclose(probs.sum(-1), 1.0, atol=1e-12)
    assert (probs >= 0).all()
