"""Domain types shared across the toolkit."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Optional, Sequence

import numpy as np

DEFAULT_SPACING_MM = (1.8, 1.8)


class ArtefactType(str, Enum):
    MISTRIGGER = "mistrigger"
    BREATHING = "breathing"


class Provenance(str, Enum):
    REAL = "real"
    SYNTHETIC = "synthetic"


def _frozen_array(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float32, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CineSequence:
    """A 2D+time magnitude stack of shape (T, H, W), stored as float32."""

    id: str
    frames: np.ndarray
    pixel_spacing_mm: tuple[float, float] = DEFAULT_SPACING_MM

    def __post_init__(self) -> None:
        frames = np.asarray(self.frames)
        if frames.ndim != 3:
            raise ValueError(f"{self.id}: frames must be T x H x W, got shape {frames.shape}")
        if frames.shape[0] < 2:
            raise ValueError(f"{self.id}: need at least 2 frames, got {frames.shape[0]}")
        if not np.all(np.isfinite(frames)):
            raise ValueError(f"{self.id}: frames contain non-finite values")
        object.__setattr__(self, "frames", _frozen_array(frames))
        object.__setattr__(self, "pixel_spacing_mm", tuple(float(s) for s in self.pixel_spacing_mm))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.frames.shape  # type: ignore[return-value]

    def with_frames(self, frames: np.ndarray, id: Optional[str] = None) -> "CineSequence":
        return CineSequence(id=self.id if id is None else id, frames=frames,
                            pixel_spacing_mm=self.pixel_spacing_mm)


@dataclass(frozen=True)
class CorruptionSpec:
    """Parameters of one synthetic corruption.

    ``z`` may be ``math.inf`` which means "no lines replaced".
    """

    artefact_type: ArtefactType
    severity: int
    seed: int
    z: float = math.inf
    frame_offset_range: tuple[int, int] = (-5, 5)
    cycles: int = 4
    amplitude_px: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "artefact_type", ArtefactType(self.artefact_type))
        if self.severity < 1:
            raise ValueError("severity index starts at 1")
        if self.z < 2:
            raise ValueError(f"line skip z must be >= 2, got {self.z}")
        if self.cycles < 1 or self.amplitude_px < 0:
            raise ValueError("breathing needs cycles >= 1 and amplitude >= 0")


@dataclass(frozen=True)
class QualityLabel:
    label: int
    provenance: Provenance = Provenance.REAL
    artefact_type: Optional[ArtefactType] = None
    severity: Optional[int] = None

    def __post_init__(self) -> None:
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        if self.artefact_type is not None:
            object.__setattr__(self, "artefact_type", ArtefactType(self.artefact_type))
        synthetic = self.provenance is Provenance.SYNTHETIC
        if synthetic != (self.severity is not None):
            raise ValueError("severity must be present exactly for synthetic labels")


@dataclass(frozen=True)
class LabeledItem:
    id: str
    path: str
    label: QualityLabel


@dataclass
class LabeledDataset:
    items: list[LabeledItem] = field(default_factory=list)

    def __post_init__(self) -> None:
        ids = [it.id for it in self.items]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate ids in dataset: {dup[:5]}")

    @property
    def n(self) -> int:
        return len(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self) -> Iterator[LabeledItem]:
        return iter(self.items)

    def extend(self, more: Sequence[LabeledItem]) -> None:
        self.items = self.items + list(more)
        self.__post_init__()


def normalize(seq: CineSequence) -> CineSequence:
    """Per-sequence min-max scaling to [0, 1]; a constant stack maps to zeros."""
    f = seq.frames
    if not np.all(np.isfinite(f)):
        raise ValueError(f"{seq.id}: cannot normalise non-finite frames")
    lo = f.min()
    hi = f.max()
    if hi == lo:
        return seq.with_frames(np.zeros_like(f))
    if lo == 0 and hi == 1:
        return seq
    out = (f.astype(np.float64) - lo) / (float(hi) - float(lo))
    return seq.with_frames(out)
