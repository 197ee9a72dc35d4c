"""Encoder forward/backward passes and task heads.

Post-norm residual blocks: summed embeddings go through layer norm, then
each block applies multi-head self-attention and a GELU feed-forward,
with layer norm after each residual add.  Pad keys are masked out of the
attention softmax additively.  The pooled vector is tanh of a learned
projection of the first position.

The backward pass mirrors the forward exactly; gradients accumulate into
one dict keyed like the parameters.  All heavy elementwise pieces route
through ``prognote.kernels`` so either backend can serve them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import kernels as K
from ..errors import ContractViolation, InputError
from .params import EncoderParams, zero_grads

LN_EPS = 1e-12


@dataclass
class EncoderOutput:
    hidden: np.ndarray
    pooled: np.ndarray
    attention: tuple[np.ndarray, ...]
    cache: dict = field(repr=False, default_factory=dict)


def _validate_batch(params: EncoderParams, ids, segment_ids, attention_mask):
    cfg = params.config
    ids = np.asarray(ids, dtype=np.int64)
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    attention_mask = np.asarray(attention_mask, dtype=np.int64)
    if ids.ndim != 2:
        raise InputError("ids must be a (batch, length) array")
    if segment_ids.shape != ids.shape or attention_mask.shape != ids.shape:
        raise InputError("segment_ids and attention_mask must match ids in shape")
    if ids.shape[1] > cfg.max_len:
        raise InputError(
            f"sequence length {ids.shape[1]} exceeds max_len {cfg.max_len}"
        )
    if ids.shape[0] == 0 or ids.shape[1] == 0:
        raise InputError("batch must be non-empty")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise InputError("token id outside the vocabulary range")
    if not np.isin(segment_ids, (0, 1)).all():
        raise InputError("segment ids must be 0 or 1")
    if not np.isin(attention_mask, (0, 1)).all():
        raise InputError("attention mask entries must be 0 or 1")
    if (attention_mask.sum(axis=1) == 0).any():
        raise InputError("every sequence needs at least one unmasked position")
    return ids, segment_ids, attention_mask


def _dropout_mask(rng, shape, rate, dtype):
    keep = (rng.random(shape) >= rate).astype(dtype)
    return keep / dtype(1.0 - rate)


def forward(
    params: EncoderParams,
    ids,
    segment_ids,
    attention_mask,
    rng: Optional[np.random.Generator] = None,
) -> EncoderOutput:
    """Run the encoder on a batch of token sequences.

    Dropout is applied only when the config rate is positive and an
    ``rng`` is supplied; evaluation calls omit the rng and are exact.
    """
    cfg = params.config
    ids, segment_ids, attention_mask = _validate_batch(
        params, ids, segment_ids, attention_mask
    )
    dt = cfg.dtype
    batch, length = ids.shape
    hidden = cfg.hidden
    scale = dt(1.0 / math.sqrt(cfg.head_dim))
    fmask = np.ascontiguousarray(attention_mask.astype(dt))
    drop = cfg.dropout if (cfg.dropout > 0.0 and rng is not None) else 0.0

    emb = (
        params["embed.tok"][ids]
        + params["embed.pos"][:length][None, :, :]
        + params["embed.seg"][segment_ids]
    )
    if drop:
        emb_mask = _dropout_mask(rng, emb.shape, drop, dt)
        emb = emb * emb_mask
    else:
        emb_mask = None
    x2d, emb_mean, emb_rstd = K.layer_norm_fwd(
        emb.reshape(-1, hidden), params["embed.ln.g"], params["embed.ln.b"], LN_EPS
    )
    x = x2d.reshape(batch, length, hidden)

    cache: dict = {
        "ids": ids,
        "segment_ids": segment_ids,
        "fmask": fmask,
        "emb": emb,
        "emb_mean": emb_mean,
        "emb_rstd": emb_rstd,
        "emb_drop": emb_mask,
        "layers": [],
    }
    attentions = []
    for i in range(cfg.layers):
        x, layer_cache, probs = _layer_forward(params, i, x, fmask, scale, drop, rng)
        cache["layers"].append(layer_cache)
        attentions.append(probs)

    first = x[:, 0, :]
    pooled_pre = first @ params["pooler.w"] + params["pooler.b"]
    pooled = np.tanh(pooled_pre)
    cache["final_hidden"] = x
    cache["pooled_first"] = first
    cache["pooled"] = pooled
    return EncoderOutput(
        hidden=x, pooled=pooled, attention=tuple(attentions), cache=cache
    )


def _split_heads(x, heads):
    batch, length, hidden = x.shape
    return x.reshape(batch, length, heads, hidden // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    batch, heads, length, head_dim = x.shape
    return x.transpose(0, 2, 1, 3).reshape(batch, length, heads * head_dim)


def _layer_forward(params, i, x, fmask, scale, drop, rng):
    cfg = params.config
    batch, length, hidden = x.shape
    prefix = f"layer{i}"

    q = _split_heads(x @ params[f"{prefix}.attn.q.w"] + params[f"{prefix}.attn.q.b"], cfg.heads)
    k = _split_heads(x @ params[f"{prefix}.attn.k.w"] + params[f"{prefix}.attn.k.b"], cfg.heads)
    v = _split_heads(x @ params[f"{prefix}.attn.v.w"] + params[f"{prefix}.attn.v.b"], cfg.heads)
    scores = np.matmul(q, k.transpose(0, 1, 3, 2)) * scale
    probs = K.masked_softmax_fwd(scores, fmask)
    context = _merge_heads(np.matmul(probs, v))
    attn_out = context @ params[f"{prefix}.attn.out.w"] + params[f"{prefix}.attn.out.b"]
    if drop:
        attn_drop = _dropout_mask(rng, attn_out.shape, drop, x.dtype)
        attn_out = attn_out * attn_drop
    else:
        attn_drop = None
    resid1 = x + attn_out
    x1_2d, ln1_mean, ln1_rstd = K.layer_norm_fwd(
        resid1.reshape(-1, hidden),
        params[f"{prefix}.attn.ln.g"],
        params[f"{prefix}.attn.ln.b"],
        LN_EPS,
    )
    x1 = x1_2d.reshape(batch, length, hidden)

    ffn_pre = x1 @ params[f"{prefix}.ffn.fc1.w"] + params[f"{prefix}.ffn.fc1.b"]
    ffn_act = K.gelu_fwd(ffn_pre)
    ffn_out = ffn_act @ params[f"{prefix}.ffn.fc2.w"] + params[f"{prefix}.ffn.fc2.b"]
    if drop:
        ffn_drop = _dropout_mask(rng, ffn_out.shape, drop, x.dtype)
        ffn_out = ffn_out * ffn_drop
    else:
        ffn_drop = None
    resid2 = x1 + ffn_out
    x2_2d, ln2_mean, ln2_rstd = K.layer_norm_fwd(
        resid2.reshape(-1, hidden),
        params[f"{prefix}.ffn.ln.g"],
        params[f"{prefix}.ffn.ln.b"],
        LN_EPS,
    )
    x2 = x2_2d.reshape(batch, length, hidden)

    layer_cache = {
        "x_in": x,
        "q": q,
        "k": k,
        "v": v,
        "probs": probs,
        "context": context,
        "attn_drop": attn_drop,
        "resid1": resid1,
        "ln1_mean": ln1_mean,
        "ln1_rstd": ln1_rstd,
        "x1": x1,
        "ffn_pre": ffn_pre,
        "ffn_act": ffn_act,
        "ffn_drop": ffn_drop,
        "resid2": resid2,
        "ln2_mean": ln2_mean,
        "ln2_rstd": ln2_rstd,
    }
    return x2, layer_cache, probs


def backward(
    params: EncoderParams,
    cache: dict,
    d_hidden: Optional[np.ndarray] = None,
    d_pooled: Optional[np.ndarray] = None,
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given its hidden/pooled gradients."""
    cfg = params.config
    if d_hidden is None and d_pooled is None:
        raise ContractViolation("backward needs d_hidden or d_pooled")
    grads = zero_grads(params)
    x = cache["final_hidden"]
    batch, length, hidden = x.shape
    scale = cfg.dtype(1.0 / math.sqrt(cfg.head_dim))

    dx = np.zeros_like(x)
    if d_hidden is not None:
        dx += d_hidden
    if d_pooled is not None:
        pooled = cache["pooled"]
        dpre = d_pooled * (1.0 - pooled * pooled)
        grads["pooler.w"] += cache["pooled_first"].T @ dpre
        grads["pooler.b"] += dpre.sum(axis=0)
        dx[:, 0, :] += dpre @ params["pooler.w"].T

    for i in reversed(range(cfg.layers)):
        dx = _layer_backward(params, i, cache["layers"][i], dx, grads, scale)

    demb2d, dg, db = K.layer_norm_bwd(
        dx.reshape(-1, hidden),
        cache["emb"].reshape(-1, hidden),
        params["embed.ln.g"],
        cache["emb_mean"],
        cache["emb_rstd"],
    )
    grads["embed.ln.g"] += dg
    grads["embed.ln.b"] += db
    demb = demb2d.reshape(batch, length, hidden)
    if cache["emb_drop"] is not None:
        demb = demb * cache["emb_drop"]
    np.add.at(grads["embed.tok"], cache["ids"].reshape(-1), demb.reshape(-1, hidden))
    grads["embed.pos"][:length] += demb.sum(axis=0)
    np.add.at(
        grads["embed.seg"],
        cache["segment_ids"].reshape(-1),
        demb.reshape(-1, hidden),
    )
    return grads


def _layer_backward(params, i, lc, dx2, grads, scale):
    cfg = params.config
    prefix = f"layer{i}"
    batch, length, hidden = dx2.shape

    dresid2, dg2, db2 = K.layer_norm_bwd(
        dx2.reshape(-1, hidden),
        lc["resid2"].reshape(-1, hidden),
        params[f"{prefix}.ffn.ln.g"],
        lc["ln2_mean"],
        lc["ln2_rstd"],
    )
    grads[f"{prefix}.ffn.ln.g"] += dg2
    grads[f"{prefix}.ffn.ln.b"] += db2
    dresid2 = dresid2.reshape(batch, length, hidden)

    dffn_out = dresid2 if lc["ffn_drop"] is None else dresid2 * lc["ffn_drop"]
    dffn_act = dffn_out @ params[f"{prefix}.ffn.fc2.w"].T
    grads[f"{prefix}.ffn.fc2.w"] += (
        lc["ffn_act"].reshape(-1, cfg.ffn).T @ dffn_out.reshape(-1, hidden)
    )
    grads[f"{prefix}.ffn.fc2.b"] += dffn_out.sum(axis=(0, 1))
    dffn_pre = K.gelu_bwd(lc["ffn_pre"], dffn_act)
    dx1 = dresid2 + dffn_pre @ params[f"{prefix}.ffn.fc1.w"].T
    grads[f"{prefix}.ffn.fc1.w"] += (
        lc["x1"].reshape(-1, hidden).T @ dffn_pre.reshape(-1, cfg.ffn)
    )
    grads[f"{prefix}.ffn.fc1.b"] += dffn_pre.sum(axis=(0, 1))

    dresid1, dg1, db1 = K.layer_norm_bwd(
        dx1.reshape(-1, hidden),
        lc["resid1"].reshape(-1, hidden),
        params[f"{prefix}.attn.ln.g"],
        lc["ln1_mean"],
        lc["ln1_rstd"],
    )
    grads[f"{prefix}.attn.ln.g"] += dg1
    grads[f"{prefix}.attn.ln.b"] += db1
    dresid1 = dresid1.reshape(batch, length, hidden)

    dattn_out = dresid1 if lc["attn_drop"] is None else dresid1 * lc["attn_drop"]
    dcontext = dattn_out @ params[f"{prefix}.attn.out.w"].T
    grads[f"{prefix}.attn.out.w"] += (
        lc["context"].reshape(-1, hidden).T @ dattn_out.reshape(-1, hidden)
    )
    grads[f"{prefix}.attn.out.b"] += dattn_out.sum(axis=(0, 1))

    dctx_heads = _split_heads(dcontext, cfg.heads)
    dprobs = np.matmul(dctx_heads, lc["v"].transpose(0, 1, 3, 2))
    dvh = np.matmul(lc["probs"].transpose(0, 1, 3, 2), dctx_heads)
    dscores = K.masked_softmax_bwd(np.ascontiguousarray(dprobs), lc["probs"]) * scale
    dqh = np.matmul(dscores, lc["k"])
    dkh = np.matmul(dscores.transpose(0, 1, 3, 2), lc["q"])

    dq = _merge_heads(dqh)
    dk = _merge_heads(dkh)
    dv = _merge_heads(dvh)
    x_in = lc["x_in"]
    x2d = x_in.reshape(-1, hidden)
    dx_in = dresid1.copy()
    for tag, dmat in (("q", dq), ("k", dk), ("v", dv)):
        w = params[f"{prefix}.attn.{tag}.w"]
        grads[f"{prefix}.attn.{tag}.w"] += x2d.T @ dmat.reshape(-1, hidden)
        grads[f"{prefix}.attn.{tag}.b"] += dmat.sum(axis=(0, 1))
        dx_in += dmat @ w.T
    return dx_in


def mlm_head_forward(params: EncoderParams, hidden: np.ndarray):
    """Project hidden states to vocabulary logits via the tied decoder.

    Returns (logits, cache) where logits is (batch, length, vocab).
    """
    cfg = params.config
    batch, length, width = hidden.shape
    t1 = hidden @ params["mlm.dense.w"] + params["mlm.dense.b"]
    t2 = K.gelu_fwd(t1)
    t3_2d, mean, rstd = K.layer_norm_fwd(
        t2.reshape(-1, width), params["mlm.ln.g"], params["mlm.ln.b"], LN_EPS
    )
    t3 = t3_2d.reshape(batch, length, width)
    logits = t3 @ params["embed.tok"].T + params["mlm.out.b"]
    cache = {"hidden": hidden, "t1": t1, "t2": t2, "t3": t3, "mean": mean, "rstd": rstd}
    return logits, cache


def mlm_head_backward(params, head_cache, dlogits, grads) -> np.ndarray:
    """Accumulate MLM head gradients (tied decoder included); returns d_hidden."""
    cfg = params.config
    width = cfg.hidden
    t3 = head_cache["t3"]
    flat_dl = dlogits.reshape(-1, cfg.vocab_size)
    grads["mlm.out.b"] += flat_dl.sum(axis=0)
    grads["embed.tok"] += flat_dl.T @ t3.reshape(-1, width)
    dt3 = dlogits @ params["embed.tok"]
    dt2_2d, dg, db = K.layer_norm_bwd(
        dt3.reshape(-1, width),
        head_cache["t2"].reshape(-1, width),
        params["mlm.ln.g"],
        head_cache["mean"],
        head_cache["rstd"],
    )
    grads["mlm.ln.g"] += dg
    grads["mlm.ln.b"] += db
    dt1 = K.gelu_bwd(head_cache["t1"], dt2_2d.reshape(dt3.shape))
    grads["mlm.dense.w"] += (
        head_cache["hidden"].reshape(-1, width).T @ dt1.reshape(-1, width)
    )
    grads["mlm.dense.b"] += dt1.sum(axis=(0, 1))
    return dt1 @ params["mlm.dense.w"].T


def nsp_forward(params: EncoderParams, pooled: np.ndarray) -> np.ndarray:
    return pooled @ params["nsp.w"] + params["nsp.b"]


def nsp_backward(params, pooled, dlogits, grads) -> np.ndarray:
    grads["nsp.w"] += pooled.T @ dlogits
    grads["nsp.b"] += dlogits.sum(axis=0)
    return dlogits @ params["nsp.w"].T


def classifier_forward(params: EncoderParams, vectors: np.ndarray) -> np.ndarray:
    """Single-logit head over patient vectors; vectors is (n, hidden)."""
    return vectors @ params["cls.w"] + params["cls.b"][0]


def classifier_backward(params, vectors, dz, grads) -> np.ndarray:
    grads["cls.w"] += vectors.T @ dz
    grads["cls.b"][0] += dz.sum()
    return dz[:, None] * params["cls.w"][None, :]


def max_pool(vectors: np.ndarray) -> np.ndarray:
    """Elementwise max over the first axis; rejects empty input."""
    vectors = np.asarray(vectors)
    if vectors.ndim != 2 or vectors.shape[0] == 0:
        raise ContractViolation("max_pool needs a non-empty (n, hidden) array")
    return vectors.max(axis=0)


def max_pool_backward(vectors: np.ndarray, dpooled: np.ndarray) -> np.ndarray:
    """Route the gradient to the first argmax row per dimension."""
    winners = np.argmax(vectors, axis=0)
    out = np.zeros_like(vectors)
    out[winners, np.arange(vectors.shape[1])] = dpooled
    return out


def sigmoid(z):
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax_xent(logits: np.ndarray, labels: np.ndarray, ignore_index: int = -1):
    """Mean cross-entropy over positions whose label is not the sentinel.

    ``logits`` has class scores in the last axis; ``labels`` matches the
    leading axes.  Returns (loss, dlogits); when nothing is labeled the
    loss is 0 with zero gradients.
    """
    classes = logits.shape[-1]
    flat = logits.reshape(-1, classes)
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    if lab.shape[0] != flat.shape[0]:
        raise InputError("labels do not match the logits' leading shape")
    selected = lab != ignore_index
    dflat = np.zeros_like(flat)
    count = int(selected.sum())
    if count == 0:
        return 0.0, dflat.reshape(logits.shape)
    sub = flat[selected]
    target = lab[selected]
    if target.min() < 0 or target.max() >= classes:
        raise InputError("label id outside the class range")
    shifted = sub - sub.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    denom = expd.sum(axis=1, keepdims=True)
    logp = shifted - np.log(denom)
    rows = np.arange(count)
    loss = float(-logp[rows, target].mean())
    dsub = expd / denom
    dsub[rows, target] -= 1.0
    dsub /= count
    dflat[selected] = dsub
    return loss, dflat.reshape(logits.shape)
