"""Kernel backend selection.

Two interchangeable implementations of the numeric hot spots exist: a
compiled Cython extension and a pure numpy fallback.  The default is the
compiled one when it is importable.  The ``PROGNOTE_KERNELS`` environment
variable pins the choice at import time ("python", "cython", or "auto"),
and ``use_backend`` rebinds it at runtime (used by tests and benchmarks).
"""

from __future__ import annotations

import os

from ..errors import ConfigError
from . import pure

_FORWARDED = (
    "layer_norm_fwd",
    "layer_norm_bwd",
    "masked_softmax_fwd",
    "masked_softmax_bwd",
    "gelu_fwd",
    "gelu_bwd",
    "adam_update",
)

_BACKENDS = {"python": pure}
try:
    from . import compiled as _compiled

    _BACKENDS["cython"] = _compiled
except ImportError:
    pass

BACKEND = ""


def available_backends() -> tuple[str, ...]:
    return tuple(sorted(_BACKENDS))


def use_backend(name: str) -> None:
    """Rebind the module-level kernel functions to one backend."""
    global BACKEND
    if name not in _BACKENDS:
        raise ConfigError(
            f"kernel backend '{name}' is not available; "
            f"built backends: {', '.join(available_backends())}"
        )
    impl = _BACKENDS[name]
    for fn in _FORWARDED:
        globals()[fn] = getattr(impl, fn)
    BACKEND = name


def _initial_choice() -> str:
    requested = os.environ.get("PROGNOTE_KERNELS", "auto").lower()
    if requested == "auto":
        return "cython" if "cython" in _BACKENDS else "python"
    if requested not in ("python", "cython"):
        raise ConfigError(
            f"PROGNOTE_KERNELS must be 'python', 'cython', or 'auto', "
            f"got '{requested}'"
        )
    if requested not in _BACKENDS:
        raise ConfigError(
            f"PROGNOTE_KERNELS={requested} but that backend is not built"
        )
    return requested


use_backend(_initial_choice())
