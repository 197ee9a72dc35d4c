"""Finite-difference validation of the analytic gradients.

The check builds a small but fully wired problem: a random batch with
padding and both segment ids, masked-token labels for the vocabulary
head, next-sentence labels for the pooled head, and a max-pooled
classification target.  The composite loss touches every parameter
family, so sampling coordinates from each family validates the whole
backward pass against central differences.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import ConfigError
from . import core
from .params import EncoderConfig, EncoderParams, init_params

_DEFAULT_CONFIG = EncoderConfig(
    vocab_size=53,
    max_len=8,
    hidden=16,
    layers=2,
    heads=2,
    ffn=32,
    dropout=0.0,
    precision=64,
)


@dataclass
class GradCheckReport:
    passed: bool
    n_checked: int
    tolerance: float
    step_size: float
    worst: tuple[str, int, float, float, float] | None
    failures: list[tuple[str, int, float, float, float]] = field(default_factory=list)
    family_counts: dict[str, int] = field(default_factory=dict)
    elapsed_s: float = 0.0


def _build_problem(cfg: EncoderConfig, seed: int):
    rng = np.random.Generator(np.random.PCG64(seed))
    batch, length = 4, cfg.max_len
    lengths = rng.integers(max(3, length - 3), length + 1, size=batch)
    ids = rng.integers(5, cfg.vocab_size, size=(batch, length))
    segs = np.zeros((batch, length), dtype=np.int64)
    mask = np.zeros((batch, length), dtype=np.int64)
    mlm_labels = np.full((batch, length), -1, dtype=np.int64)
    for b in range(batch):
        n = int(lengths[b])
        ids[b, 0] = 2
        ids[b, n - 1] = 3
        ids[b, n:] = 0
        mask[b, :n] = 1
        segs[b, n // 2 : n] = 1
        labeled = rng.choice(np.arange(1, n - 1), size=min(2, n - 2), replace=False)
        for pos in labeled:
            mlm_labels[b, pos] = int(rng.integers(5, cfg.vocab_size))
        ids[b, labeled[0]] = 4
    nsp_labels = np.array([0, 1, 1, 0], dtype=np.int64)[:batch]
    return {
        "ids": ids,
        "segment_ids": segs,
        "mask": mask,
        "mlm_labels": mlm_labels,
        "nsp_labels": nsp_labels,
        "target": 1.0,
    }


def _loss_value(params: EncoderParams, problem) -> float:
    out = core.forward(params, problem["ids"], problem["segment_ids"], problem["mask"])
    logits, _ = core.mlm_head_forward(params, out.hidden)
    mlm_loss, _ = core.softmax_xent(logits, problem["mlm_labels"])
    nsp_logits = core.nsp_forward(params, out.pooled)
    nsp_loss, _ = core.softmax_xent(nsp_logits, problem["nsp_labels"])
    vec = core.max_pool(out.pooled)
    z = core.classifier_forward(params, vec[None, :])[0]
    y = problem["target"]
    # Stable binary cross-entropy straight from the logit.
    bce = float(np.logaddexp(0.0, z) - y * z)
    return mlm_loss + nsp_loss + bce


def _loss_and_grads(params: EncoderParams, problem):
    out = core.forward(params, problem["ids"], problem["segment_ids"], problem["mask"])
    logits, head_cache = core.mlm_head_forward(params, out.hidden)
    mlm_loss, dlogits = core.softmax_xent(logits, problem["mlm_labels"])
    nsp_logits = core.nsp_forward(params, out.pooled)
    nsp_loss, dnsp = core.softmax_xent(nsp_logits, problem["nsp_labels"])
    vec = core.max_pool(out.pooled)
    z = core.classifier_forward(params, vec[None, :])[0]
    y = problem["target"]
    bce = float(np.logaddexp(0.0, z) - y * z)

    grad_accum = {name: np.zeros_like(arr) for name, arr in params.items()}
    d_hidden = core.mlm_head_backward(params, head_cache, dlogits, grad_accum)
    d_pooled = core.nsp_backward(params, out.pooled, dnsp, grad_accum)
    dz = core.sigmoid(z) - y
    dvec = core.classifier_backward(params, vec[None, :], np.array([dz]), grad_accum)[0]
    d_pooled = d_pooled + core.max_pool_backward(out.pooled, dvec)
    enc_grads = core.backward(params, out.cache, d_hidden=d_hidden, d_pooled=d_pooled)
    for name in grad_accum:
        grad_accum[name] += enc_grads[name]
    return mlm_loss + nsp_loss + bce, grad_accum


def gradient_check(
    config: Optional[EncoderConfig] = None,
    seed: int = 0,
    n_samples: int = 200,
    step_size: float = 1e-5,
    tolerance: float = 1e-4,
    corrupt: Optional[Callable[[dict], None]] = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    Coordinates are sampled from every parameter tensor so each family is
    covered; relative error uses ``max(|analytic|, |numeric|, 1e-4)`` as
    the denominator.  ``corrupt`` may perturb the analytic gradients
    before comparison, which is how the checker itself is validated.
    """
    started = time.perf_counter()
    cfg = config or _DEFAULT_CONFIG
    if cfg.precision != 64:
        raise ConfigError("gradient checking requires 64-bit precision")
    problem = _build_problem(cfg, seed)
    params = init_params(cfg, seed + 1)
    _, analytic = _loss_and_grads(params, problem)
    if corrupt is not None:
        corrupt(analytic)

    names = list(params.keys())
    per_family = max(1, -(-n_samples // len(names)))
    rng = np.random.Generator(np.random.PCG64(seed + 2))
    failures = []
    worst = None
    family_counts = {}
    n_checked = 0
    floor = 1e-4
    for name in names:
        arr = params[name]
        size = arr.size
        count = min(per_family, size)
        idxs = rng.choice(size, size=count, replace=False)
        family_counts[name] = count
        flat = arr.reshape(-1)
        for idx in idxs:
            idx = int(idx)
            original = flat[idx]
            flat[idx] = original + step_size
            up = _loss_value(params, problem)
            flat[idx] = original - step_size
            down = _loss_value(params, problem)
            flat[idx] = original
            numeric = (up - down) / (2.0 * step_size)
            analytic_v = float(analytic[name].reshape(-1)[idx])
            rel = abs(analytic_v - numeric) / max(abs(analytic_v), abs(numeric), floor)
            n_checked += 1
            entry = (name, idx, analytic_v, numeric, rel)
            if worst is None or rel > worst[4]:
                worst = entry
            if rel > tolerance:
                failures.append(entry)
    return GradCheckReport(
        passed=not failures,
        n_checked=n_checked,
        tolerance=tolerance,
        step_size=step_size,
        worst=worst,
        failures=failures,
        family_counts=family_counts,
        elapsed_s=time.perf_counter() - started,
    )
