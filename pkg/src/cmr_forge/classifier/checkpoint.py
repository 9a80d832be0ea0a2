"""Model checkpoints: one JSON header line, then raw little-endian f32 parameters.

The header lists parameter names and shapes in payload order.  Momentum
buffers are not stored; a loaded model starts with zero velocity.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from ..cine_io import atomic_write_bytes
from .model import ArchDescriptor, ClassifierModel, network_for

CHECKPOINT_SCHEMA = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(model: ClassifierModel, extra: dict | None = None) -> bytes:
    header = {
        "schema": CHECKPOINT_SCHEMA,
        "arch": model.arch.to_dict(),
        "seed": model.seed,
        "epoch": model.epoch,
        "params": [[k, list(v.shape)] for k, v in model.params.items()],
    }
    if extra:
        header["extra"] = extra
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    body = b"".join(np.ascontiguousarray(v, dtype="<f4").tobytes() for v in model.params.values())
    return head + body


def decode_checkpoint(data: bytes) -> ClassifierModel:
    nl = data.find(b"\n")
    if nl < 0:
        raise CheckpointError("missing checkpoint header")
    try:
        header = json.loads(data[:nl])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    if header.get("schema") != CHECKPOINT_SCHEMA:
        raise CheckpointError(f"unsupported checkpoint schema {header.get('schema')!r}")
    arch = ArchDescriptor.from_dict(header["arch"])
    expected = network_for(arch).param_shapes()
    declared = {k: tuple(s) for k, s in header["params"]}
    if list(declared) != list(expected) or any(declared[k] != expected[k] for k in expected):
        raise CheckpointError("declared parameters do not match the architecture")
    payload = memoryview(data)[nl + 1:]
    need = 4 * sum(int(np.prod(s)) for s in expected.values())
    if len(payload) != need:
        raise CheckpointError(f"payload holds {len(payload)} bytes, expected {need}")
    params, off = {}, 0
    for k, shape in expected.items():
        n = int(np.prod(shape))
        params[k] = np.frombuffer(payload, dtype="<f4", count=n, offset=off).astype(np.float32).reshape(shape)
        off += 4 * n
    return ClassifierModel(arch, params, seed=int(header["seed"]), epoch=int(header["epoch"]))


def save_checkpoint(model: ClassifierModel, path: str | os.PathLike, extra: dict | None = None) -> None:
    atomic_write_bytes(path, encode_checkpoint(model, extra))


def load_checkpoint(path: str | os.PathLike) -> ClassifierModel:
    return decode_checkpoint(Path(path).read_bytes())
