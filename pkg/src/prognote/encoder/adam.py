"""Adam optimizer over named parameter dicts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .. import kernels as K
from ..errors import ContractViolation, TrainingError
from .params import EncoderParams


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: Optional[float] = 1.0


class AdamState:
    """First/second moment accumulators plus the step counter."""

    def __init__(self, params: EncoderParams):
        self.m = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.v = {name: np.zeros_like(arr) for name, arr in params.items()}
        self.t = 0


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    """Euclidean norm over the concatenation of every gradient."""
    total = 0.0
    for g in grads.values():
        total += float(np.dot(g.reshape(-1), g.reshape(-1)))
    return math.sqrt(total)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their global norm is at most
    ``max_norm``; returns the pre-clip norm.  Direction is unchanged."""
    norm = global_grad_norm(grads)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def adam_step(
    params: EncoderParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    hyper: AdamHyper,
) -> tuple[EncoderParams, AdamState]:
    """One optimizer step, mutating params and state in place.

    Gradients are clipped by global norm first (when configured), then
    each tensor gets the bias-corrected Adam update.  Non-finite
    gradients abort with the failing step index.
    """
    if set(grads.keys()) != set(params.keys()):
        raise ContractViolation("gradient names do not match parameter names")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ContractViolation(f"gradient {name} has the wrong shape")
        if not np.isfinite(g).all():
            raise TrainingError(
                f"non-finite gradient in {name} at step {state.t + 1}",
                step=state.t + 1,
            )
    if hyper.clip_norm is not None:
        clip_by_global_norm(grads, hyper.clip_norm)
    state.t += 1
    for name, p in params.items():
        K.adam_update(
            p,
            grads[name],
            state.m[name],
            state.v[name],
            state.t,
            hyper.learning_rate,
            hyper.beta1,
            hyper.beta2,
            hyper.eps,
        )
    return params, state
