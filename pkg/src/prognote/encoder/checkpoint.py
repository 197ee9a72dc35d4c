"""Checkpoint directory format: a text manifest plus one raw array blob.

``manifest.txt`` lists the format tag, the encoder config, the optimizer
step (when optimizer state is included), and one line per array with
name, dtype, shape, byte offset, and byte count.  ``arrays.bin`` holds
the little-endian array bytes back to back in manifest order.  Writing
the same state twice produces identical bytes, and a load/save round
trip is exact.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import CheckpointError, MissingArtifactError
from .adam import AdamState
from .params import EncoderConfig, EncoderParams, param_shapes

MANIFEST_NAME = "manifest.txt"
BLOB_NAME = "arrays.bin"
FORMAT_TAG = "prognote-checkpoint-v1"

_CONFIG_FIELDS = (
    "vocab_size",
    "max_len",
    "hidden",
    "layers",
    "heads",
    "ffn",
    "dropout",
    "precision",
)


def _le_dtype(precision: int) -> np.dtype:
    return np.dtype("<f8" if precision == 64 else "<f4")


def _named_arrays(params: EncoderParams, opt_state: AdamState | None):
    for name, arr in params.items():
        yield name, arr
    if opt_state is not None:
        for name, arr in opt_state.m.items():
            yield f"adam.m.{name}", arr
        for name, arr in opt_state.v.items():
            yield f"adam.v.{name}", arr


def save_checkpoint(params: EncoderParams, path, opt_state: AdamState | None = None):
    """Write the checkpoint directory, overwriting existing contents."""
    os.makedirs(path, exist_ok=True)
    cfg = params.config
    le = _le_dtype(cfg.precision)
    lines = [f"format={FORMAT_TAG}"]
    for fieldname in _CONFIG_FIELDS:
        lines.append(f"config.{fieldname}={getattr(cfg, fieldname)!r}")
    if opt_state is not None:
        lines.append(f"adam.t={opt_state.t}")
    chunks = []
    offset = 0
    for name, arr in _named_arrays(params, opt_state):
        raw = np.ascontiguousarray(arr, dtype=le).tobytes()
        shape = ",".join(str(d) for d in arr.shape)
        lines.append(f"array {name} {le.str} {shape} {offset} {len(raw)}")
        chunks.append(raw)
        offset += len(raw)
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    with open(os.path.join(path, BLOB_NAME), "wb") as fh:
        fh.write(b"".join(chunks))


def _parse_manifest(path):
    manifest_path = os.path.join(path, MANIFEST_NAME)
    if not os.path.exists(manifest_path):
        raise MissingArtifactError(manifest_path)
    with open(manifest_path, "r", encoding="ascii") as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or lines[0] != f"format={FORMAT_TAG}":
        raise CheckpointError(f"unrecognized checkpoint format in {manifest_path}")
    config_kv: dict[str, str] = {}
    adam_t = None
    arrays = []
    for line in lines[1:]:
        if line.startswith("config."):
            key, _, value = line[len("config."):].partition("=")
            config_kv[key] = value
        elif line.startswith("adam.t="):
            adam_t = int(line.partition("=")[2])
        elif line.startswith("array "):
            parts = line.split(" ")
            if len(parts) != 6:
                raise CheckpointError(f"malformed array line: {line}")
            _, name, dtype, shape_s, offset_s, nbytes_s = parts
            shape = tuple(int(d) for d in shape_s.split(",") if d)
            arrays.append((name, dtype, shape, int(offset_s), int(nbytes_s)))
        else:
            raise CheckpointError(f"unrecognized manifest line: {line}")
    try:
        cfg = EncoderConfig(
            vocab_size=int(config_kv["vocab_size"]),
            max_len=int(config_kv["max_len"]),
            hidden=int(config_kv["hidden"]),
            layers=int(config_kv["layers"]),
            heads=int(config_kv["heads"]),
            ffn=int(config_kv["ffn"]),
            dropout=float(config_kv["dropout"]),
            precision=int(config_kv["precision"]),
        )
    except KeyError as exc:
        raise CheckpointError(f"manifest missing config field {exc}") from exc
    return cfg, adam_t, arrays


def load_checkpoint(
    path, expected_config: EncoderConfig | None = None
) -> tuple[EncoderParams, AdamState | None]:
    """Read a checkpoint directory back into params and optimizer state.

    A missing manifest raises the missing-artifact error with the absent
    path; structural problems (wrong shapes, truncated blob, config
    mismatch) raise a checkpoint error.
    """
    cfg, adam_t, array_specs = _parse_manifest(path)
    if expected_config is not None and cfg != expected_config:
        raise CheckpointError(
            f"checkpoint config {cfg} does not match the expected "
            f"config {expected_config}"
        )
    blob_path = os.path.join(path, BLOB_NAME)
    if not os.path.exists(blob_path):
        raise MissingArtifactError(blob_path)
    with open(blob_path, "rb") as fh:
        blob = fh.read()
    le = _le_dtype(cfg.precision)
    loaded: dict[str, np.ndarray] = {}
    for name, dtype, shape, offset, nbytes in array_specs:
        if dtype != le.str:
            raise CheckpointError(f"array {name} has dtype {dtype}, expected {le.str}")
        expected_bytes = int(np.prod(shape, dtype=np.int64)) * le.itemsize if shape else le.itemsize
        if shape == ():
            expected_bytes = le.itemsize
        if nbytes != expected_bytes:
            raise CheckpointError(f"array {name} claims {nbytes} bytes, expected {expected_bytes}")
        if offset + nbytes > len(blob):
            raise CheckpointError(f"array {name} extends past the end of the blob")
        flat = np.frombuffer(blob, dtype=le, count=nbytes // le.itemsize, offset=offset)
        loaded[name] = flat.reshape(shape).astype(cfg.dtype)

    shapes = param_shapes(cfg)
    missing = [n for n in shapes if n not in loaded]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {', '.join(missing)}")
    params = EncoderParams(cfg, {n: loaded[n] for n in shapes})

    opt_state = None
    if adam_t is not None:
        opt_state = AdamState(params)
        opt_state.t = adam_t
        for name in shapes:
            m_name, v_name = f"adam.m.{name}", f"adam.v.{name}"
            if m_name not in loaded or v_name not in loaded:
                raise CheckpointError(f"checkpoint lacks optimizer arrays for {name}")
            if loaded[m_name].shape != shapes[name] or loaded[v_name].shape != shapes[name]:
                raise CheckpointError(f"optimizer arrays for {name} have wrong shapes")
            opt_state.m[name] = loaded[m_name]
            opt_state.v[name] = loaded[v_name]
    return params, opt_state
