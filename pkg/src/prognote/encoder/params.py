"""Encoder configuration, parameter layout, and initialization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    max_len: int = 32
    hidden: int = 64
    layers: int = 2
    heads: int = 2
    ffn: int = 256
    dropout: float = 0.0
    precision: int = 64

    def __post_init__(self):
        problems = []
        if self.vocab_size < 5:
            problems.append("vocab_size must cover the 5 reserved tokens")
        if self.max_len < 2:
            problems.append("max_len must be at least 2")
        if self.hidden < 1 or self.layers < 1 or self.ffn < 1 or self.heads < 1:
            problems.append("hidden, layers, heads, and ffn must be positive")
        if self.hidden % max(self.heads, 1) != 0:
            problems.append("hidden must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            problems.append("dropout must lie in [0, 1)")
        if self.precision not in (32, 64):
            problems.append("precision must be 32 or 64")
        if problems:
            raise ConfigError("; ".join(problems))

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    @property
    def head_dim(self) -> int:
        return self.hidden // self.heads


def param_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Named parameter tensors in their canonical (checkpoint) order."""
    v, p, h, f = cfg.vocab_size, cfg.max_len, cfg.hidden, cfg.ffn
    shapes: dict[str, tuple[int, ...]] = {
        "embed.tok": (v, h),
        "embed.pos": (p, h),
        "embed.seg": (2, h),
        "embed.ln.g": (h,),
        "embed.ln.b": (h,),
    }
    for i in range(cfg.layers):
        prefix = f"layer{i}"
        shapes[f"{prefix}.attn.q.w"] = (h, h)
        shapes[f"{prefix}.attn.q.b"] = (h,)
        shapes[f"{prefix}.attn.k.w"] = (h, h)
        shapes[f"{prefix}.attn.k.b"] = (h,)
        shapes[f"{prefix}.attn.v.w"] = (h, h)
        shapes[f"{prefix}.attn.v.b"] = (h,)
        shapes[f"{prefix}.attn.out.w"] = (h, h)
        shapes[f"{prefix}.attn.out.b"] = (h,)
        shapes[f"{prefix}.attn.ln.g"] = (h,)
        shapes[f"{prefix}.attn.ln.b"] = (h,)
        shapes[f"{prefix}.ffn.fc1.w"] = (h, f)
        shapes[f"{prefix}.ffn.fc1.b"] = (f,)
        shapes[f"{prefix}.ffn.fc2.w"] = (f, h)
        shapes[f"{prefix}.ffn.fc2.b"] = (h,)
        shapes[f"{prefix}.ffn.ln.g"] = (h,)
        shapes[f"{prefix}.ffn.ln.b"] = (h,)
    shapes["pooler.w"] = (h, h)
    shapes["pooler.b"] = (h,)
    shapes["mlm.dense.w"] = (h, h)
    shapes["mlm.dense.b"] = (h,)
    shapes["mlm.ln.g"] = (h,)
    shapes["mlm.ln.b"] = (h,)
    shapes["mlm.out.b"] = (v,)
    shapes["nsp.w"] = (h, 2)
    shapes["nsp.b"] = (2,)
    shapes["cls.w"] = (h,)
    shapes["cls.b"] = (1,)
    return shapes


class EncoderParams:
    """Named parameter arrays plus the config that shaped them."""

    def __init__(self, config: EncoderConfig, arrays: dict[str, np.ndarray]):
        expected = param_shapes(config)
        if list(arrays.keys()) != list(expected.keys()):
            raise ConfigError("parameter names do not match the expected layout")
        for name, arr in arrays.items():
            if arr.shape != expected[name]:
                raise ConfigError(
                    f"parameter {name} has shape {arr.shape}, "
                    f"expected {expected[name]}"
                )
            if arr.dtype != config.dtype:
                raise ConfigError(f"parameter {name} has dtype {arr.dtype}")
        self.config = config
        self._arrays = arrays

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def keys(self):
        return self._arrays.keys()

    def items(self):
        return self._arrays.items()

    @property
    def n_parameters(self) -> int:
        return sum(a.size for a in self._arrays.values())

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            self.config, {k: v.copy() for k, v in self._arrays.items()}
        )


def _truncated_normal(rng, shape, std, dtype):
    """Normal(0, std) with draws outside two deviations resampled."""
    x = rng.normal(0.0, std, size=shape)
    bound = 2.0 * std
    while True:
        bad = np.abs(x) > bound
        n_bad = int(bad.sum())
        if n_bad == 0:
            break
        x[bad] = rng.normal(0.0, std, size=n_bad)
    return x.astype(dtype)


def init_params(cfg: EncoderConfig, seed: int, std: float = 0.02) -> EncoderParams:
    """Truncated-normal weights, zero biases, unit layer-norm gains."""
    rng = np.random.Generator(np.random.PCG64(seed))
    arrays: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".g"):
            arrays[name] = np.ones(shape, dtype=cfg.dtype)
        elif name.endswith(".b"):
            arrays[name] = np.zeros(shape, dtype=cfg.dtype)
        else:
            arrays[name] = _truncated_normal(rng, shape, std, cfg.dtype)
    return EncoderParams(cfg, arrays)


def zero_grads(params: EncoderParams) -> dict[str, np.ndarray]:
    """A zero array per parameter, in parameter order."""
    return {name: np.zeros_like(arr) for name, arr in params.items()}
