"""CINE binary files, label manifests and atomic writes.

CINE layout (little-endian)::

    b"CINE"  u8 version=1  u8 dtype=0 (f32)  u16 reserved=0
    u32 T  u32 H  u32 W
    T*H*W float32 values, frame-major, row-major within a frame
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

from .types import CineSequence, LabeledDataset, LabeledItem, QualityLabel

MAGIC = b"CINE"
VERSION = 1
DTYPE_F32 = 0
_HEADER = struct.Struct("<4sBBHIII")

MANIFEST_FIELDS = ("id", "path", "label", "artefact_type", "severity", "provenance")
LABELS_FILE = "labels.csv"


class CineFormatError(ValueError):
    code = "cine_format"


class BadMagicError(CineFormatError):
    code = "bad_magic"


class VersionMismatchError(CineFormatError):
    code = "version_mismatch"


class UnsupportedDtypeError(CineFormatError):
    code = "unsupported_dtype"


class TruncatedPayloadError(CineFormatError):
    code = "truncated"


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj: Any) -> str:
    """Canonical JSON text: sorted keys, fixed separators, trailing newline."""
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path: str | os.PathLike, obj: Any) -> None:
    atomic_write_text(path, dump_json(obj))


def encode_cine(seq: CineSequence) -> bytes:
    t, h, w = seq.shape
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, 0, t, h, w)
    return header + np.ascontiguousarray(seq.frames, dtype="<f4").tobytes()


def decode_cine(data: bytes, seq_id: str = "") -> CineSequence:
    if len(data) < _HEADER.size:
        if not data.startswith(MAGIC[: len(data)]):
            raise BadMagicError(f"{seq_id}: not a CINE file")
        raise TruncatedPayloadError(f"{seq_id}: header truncated ({len(data)} bytes)")
    magic, version, dtype, _reserved, t, h, w = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"{seq_id}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatchError(f"{seq_id}: unsupported CINE version {version}")
    if dtype != DTYPE_F32:
        raise UnsupportedDtypeError(f"{seq_id}: unsupported dtype code {dtype}")
    n = t * h * w
    payload = data[_HEADER.size:]
    if len(payload) < 4 * n:
        raise TruncatedPayloadError(
            f"{seq_id}: header declares {n} values, payload holds {len(payload) // 4}")
    frames = np.frombuffer(payload, dtype="<f4", count=n).reshape(t, h, w)
    return CineSequence(id=seq_id, frames=frames)


def write_cine(seq: CineSequence, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, encode_cine(seq))


def read_cine(path: str | os.PathLike, seq_id: Optional[str] = None) -> CineSequence:
    path = Path(path)
    return decode_cine(path.read_bytes(), seq_id if seq_id is not None else path.stem)


def _label_row(item: LabeledItem) -> dict[str, str]:
    lab = item.label
    return {
        "id": item.id,
        "path": item.path,
        "label": str(lab.label),
        "artefact_type": lab.artefact_type.value if lab.artefact_type else "",
        "severity": "" if lab.severity is None else str(lab.severity),
        "provenance": lab.provenance.value,
    }


def write_manifest(items: Iterable[LabeledItem], path: str | os.PathLike) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
    writer.writeheader()
    for item in items:
        writer.writerow(_label_row(item))
    atomic_write_text(path, buf.getvalue())


def read_manifest(path: str | os.PathLike) -> LabeledDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != MANIFEST_FIELDS:
            raise ValueError(f"{path}: manifest header must be {','.join(MANIFEST_FIELDS)}")
        items = []
        for row in reader:
            label = QualityLabel(
                label=int(row["label"]),
                provenance=row["provenance"],
                artefact_type=row["artefact_type"] or None,
                severity=int(row["severity"]) if row["severity"] else None,
            )
            items.append(LabeledItem(id=row["id"], path=row["path"], label=label))
    return LabeledDataset(items)


def load_items(directory: str | os.PathLike) -> list[tuple[LabeledItem, CineSequence]]:
    """Read ``labels.csv`` in *directory* and every CINE it lists."""
    directory = Path(directory)
    ds = read_manifest(directory / LABELS_FILE)
    out = []
    for item in ds:
        p = Path(item.path)
        if not p.is_absolute():
            p = directory / p
        out.append((item, read_cine(p, item.id)))
    return out
