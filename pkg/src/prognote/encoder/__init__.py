"""Compact transformer encoder with exact analytic gradients.

Pure array code split across focused modules: parameter layout and
initialization, the forward/backward core with its task heads, the Adam
optimizer, a byte-stable checkpoint format, and a finite-difference
gradient checker.
"""

from .params import EncoderConfig, EncoderParams, init_params, param_shapes, zero_grads
from .core import (
    EncoderOutput,
    LN_EPS,
    backward,
    classifier_backward,
    classifier_forward,
    forward,
    max_pool,
    max_pool_backward,
    mlm_head_backward,
    mlm_head_forward,
    nsp_backward,
    nsp_forward,
    sigmoid,
    softmax_xent,
)
from .adam import AdamHyper, AdamState, adam_step, clip_by_global_norm, global_grad_norm
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradCheckReport, gradient_check

__all__ = [
    "AdamHyper",
    "AdamState",
    "EncoderConfig",
    "EncoderOutput",
    "EncoderParams",
    "GradCheckReport",
    "LN_EPS",
    "adam_step",
    "backward",
    "classifier_backward",
    "classifier_forward",
    "clip_by_global_norm",
    "forward",
    "global_grad_norm",
    "gradient_check",
    "init_params",
    "load_checkpoint",
    "max_pool",
    "max_pool_backward",
    "mlm_head_backward",
    "mlm_head_forward",
    "nsp_backward",
    "nsp_forward",
    "param_shapes",
    "save_checkpoint",
    "sigmoid",
    "softmax_xent",
    "zero_grads",
]
