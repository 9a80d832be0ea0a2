"""Fourier transforms and k-space motion corruption.

Spectra use the unitary (``norm="ortho"``) convention with the DC term at
index ``(0, 0)``.  Phase encoding runs along image rows: a "line" of k-space
is one row ``K[l, :]``.  Reconstruction always returns magnitude images since
corrupted spectra are no longer Hermitian.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .rng import RngStream, as_generator
from .types import ArtefactType, CineSequence, CorruptionSpec, Provenance, QualityLabel

NO_CORRUPTION = math.inf


def dft2(frame: np.ndarray) -> np.ndarray:
    """Unitary 2D DFT of the last two axes (works on a frame or a stack)."""
    frame = np.asarray(frame, dtype=np.float64)
    if not np.all(np.isfinite(frame)):
        raise ValueError("dft2 input contains non-finite values")
    return np.fft.fft2(frame, norm="ortho")


def idft2_complex(k: np.ndarray) -> np.ndarray:
    return np.fft.ifft2(np.asarray(k, dtype=np.complex128), norm="ortho")


def idft2(k: np.ndarray) -> np.ndarray:
    """Inverse unitary DFT followed by the magnitude."""
    return np.abs(idft2_complex(k))


@dataclass(frozen=True)
class SeverityTable:
    """Level ``s`` (1-based, 1 = heaviest) maps to a line skip and an amplitude."""

    z: tuple[int, ...] = (2, 3, 4, 5, 6, 8, 10, 13, 16, 20)
    amplitude_px: tuple[float, ...] = (6.0, 5.0, 4.5, 4.0, 3.5, 3.0, 2.5, 2.0, 1.5, 1.0)
    frame_offset_range: tuple[int, int] = (-5, 5)
    cycles: int = 4

    def __post_init__(self) -> None:
        if len(self.z) != len(self.amplitude_px):
            raise ValueError("z and amplitude tables must have the same number of levels")
        if any(b <= a for a, b in zip(self.z, self.z[1:])) or min(self.z) < 2:
            raise ValueError("z must be >= 2 and strictly increasing with severity index")
        if any(b >= a for a, b in zip(self.amplitude_px, self.amplitude_px[1:])):
            raise ValueError("amplitude must strictly decrease with severity index")

    @property
    def b(self) -> int:
        return len(self.z)

    def spec(self, artefact_type: ArtefactType | str, severity: int, seed: int) -> CorruptionSpec:
        if not 1 <= severity <= self.b:
            raise ValueError(f"severity must lie in 1..{self.b}, got {severity}")
        kind = ArtefactType(artefact_type)
        if kind is ArtefactType.MISTRIGGER:
            return CorruptionSpec(kind, severity, seed, z=self.z[severity - 1],
                                  frame_offset_range=self.frame_offset_range)
        return CorruptionSpec(kind, severity, seed, cycles=self.cycles,
                              amplitude_px=self.amplitude_px[severity - 1])


DEFAULT_TABLE = SeverityTable()


@dataclass
class MistriggerTrace:
    """Which rows were swapped in each frame, filled in when requested."""

    phase: list[int] = field(default_factory=list)
    rows: list[np.ndarray] = field(default_factory=list)
    source_frames: list[np.ndarray] = field(default_factory=list)


def _offsets(offset_range: tuple[int, int]) -> np.ndarray:
    lo, hi = offset_range
    offs = np.array([j for j in range(lo, hi + 1) if j != 0], dtype=np.int64)
    if offs.size == 0:
        raise ValueError(f"frame offset range {offset_range} contains no non-zero offset")
    return offs


def corrupt_mistrigger(seq: CineSequence, z: float, offset_range: tuple[int, int],
                       rng, trace: Optional[MistriggerTrace] = None) -> CineSequence:
    """Swap one in ``z`` k-space rows of every frame with rows of other phases.

    For frame ``i`` a phase ``r`` is drawn from ``0..z-1``; each row ``l`` with
    ``l % z == r`` is replaced by row ``l`` of frame ``(i + j) % T`` where ``j``
    is drawn per row from ``offset_range`` without zero.
    """
    if z < 2:
        raise ValueError(f"line skip z must be >= 2, got {z}")
    offs = _offsets(offset_range)
    frames = seq.frames
    if math.isinf(z):
        return seq.with_frames(frames)
    z = int(z)
    g = as_generator(rng)
    T, H, _ = frames.shape
    kspace = dft2(frames)
    out = kspace.copy()
    for i in range(T):
        r = int(g.integers(0, z))
        rows = np.arange(r, H, z)
        src = (i + g.choice(offs, size=rows.size)) % T
        out[i, rows, :] = kspace[src, rows, :]
        if trace is not None:
            trace.phase.append(r)
            trace.rows.append(rows)
            trace.source_frames.append(src)
    return seq.with_frames(idft2(out))


def translate_rows(frame: np.ndarray, shift: int) -> np.ndarray:
    """Shift a frame (or stack) down by ``shift`` rows, clamping at the edges."""
    H = frame.shape[-2]
    idx = np.clip(np.arange(H) - shift, 0, H - 1)
    return frame[..., idx, :]


def translate(frames: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Integer translation of the last two axes with edge clamping."""
    H, W = frames.shape[-2:]
    ri = np.clip(np.arange(H) - dy, 0, H - 1)
    ci = np.clip(np.arange(W) - dx, 0, W - 1)
    return frames[..., ri[:, None], ci[None, :]]


def breathing_displacements(H: int, cycles: int, amplitude_px: float, phase: float = 0.0) -> np.ndarray:
    """Integer displacement per phase-encode row, ``round(A sin(2 pi c l / H + phase))``.

    Halves round away from zero; round-half-even would collapse neighbouring
    amplitudes (e.g. 2.0 and 2.5 px) onto the same shift pattern.
    """
    d = amplitude_px * np.sin(2.0 * np.pi * cycles * np.arange(H) / H + phase)
    return (np.sign(d) * np.floor(np.abs(d) + 0.5)).astype(np.int64)


def corrupt_breathing(seq: CineSequence, cycles: int, amplitude_px: float, rng=None,
                      random_phase: bool = False) -> CineSequence:
    """Fill each k-space row from a vertically translated copy of the frame.

    Row ``l`` is taken from the frame shifted by ``round(A sin(2 pi cycles l / H))``
    pixels, i.e. the sinusoidal breathing trace sampled once per phase-encode
    step.  With ``random_phase`` the trace starts at a phase drawn from *rng*.
    """
    if cycles < 1:
        raise ValueError("breathing needs at least one cycle")
    if amplitude_px < 0:
        raise ValueError("amplitude must be non-negative")
    frames = seq.frames
    T, H, _ = frames.shape
    phase = float(as_generator(rng).uniform(0.0, 2.0 * np.pi)) if random_phase else 0.0
    disp = breathing_displacements(H, cycles, amplitude_px, phase)
    if not disp.any():
        return seq.with_frames(frames)
    base = frames.astype(np.float64)
    out = np.empty((T, H, frames.shape[2]), dtype=np.complex128)
    for shift in np.unique(disp):
        rows = np.flatnonzero(disp == shift)
        k = dft2(translate_rows(base, int(shift)))
        out[:, rows, :] = k[:, rows, :]
    return seq.with_frames(idft2(out))


def apply_severity(seq: CineSequence, artefact_type: ArtefactType | str, severity: int,
                   table: SeverityTable = DEFAULT_TABLE, rng=None,
                   seed: int = 0) -> tuple[CineSequence, QualityLabel]:
    spec = table.spec(artefact_type, severity, seed)
    if rng is None:
        rng = RngStream(seed).child(f"corrupt/{seq.id}")
    if spec.artefact_type is ArtefactType.MISTRIGGER:
        out = corrupt_mistrigger(seq, spec.z, spec.frame_offset_range, rng)
    elif spec.artefact_type is ArtefactType.BREATHING:
        out = corrupt_breathing(seq, spec.cycles, spec.amplitude_px, rng)
    else:  # pragma: no cover - enum is closed
        raise ValueError(f"unknown artefact type {artefact_type!r}")
    label = QualityLabel(label=1, provenance=Provenance.SYNTHETIC,
                         artefact_type=spec.artefact_type, severity=severity)
    return out, label


def augment_range(shape: Sequence[int]) -> tuple[int, int]:
    """Maximum shift (rows, cols) as one fifth of the frame size."""
    H, W = shape[-2:]
    return H // 5, W // 5


def translate_augment(seq: CineSequence, rng) -> CineSequence:
    """Shift every frame by one random (dy, dx) drawn from +-(H/5, W/5)."""
    g = as_generator(rng)
    my, mx = augment_range(seq.shape)
    dy = int(g.integers(-my, my + 1))
    dx = int(g.integers(-mx, mx + 1))
    if dy == 0 and dx == 0:
        return seq
    return seq.with_frames(translate(seq.frames, dy, dx))
