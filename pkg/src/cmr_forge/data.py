"""Assemble labelled crop sets from phantoms: render, localise, crop, corrupt."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kspace import DEFAULT_TABLE, SeverityTable, apply_severity
from .phantom import generate_phantom, sample_config
from .rng import RngStream
from .roi import extract_roi
from .types import ArtefactType, CineSequence, Provenance, QualityLabel, normalize

ARTEFACT_TYPES = (ArtefactType.MISTRIGGER, ArtefactType.BREATHING)


@dataclass(frozen=True)
class RoiParams:
    size: int = 80
    r_min: int = 8
    r_max: int = 30
    top_k: int = 10
    sigma_px: float = 5.0


@dataclass(frozen=True)
class PhantomFamily:
    """A seeded, indexable population of phantoms; *name* keeps families disjoint."""

    name: str
    master_seed: int
    grid: tuple[int, int] = (192, 192)
    T: int = 50
    roi: RoiParams = field(default_factory=RoiParams)

    def config(self, index: int):
        stream = RngStream(self.master_seed).child(f"phantom/{self.name}/{index}")
        noise_seed = int(stream.child("noise-seed").generator().integers(0, 2**63 - 1))
        return sample_config(stream, seed=noise_seed, grid=tuple(self.grid), T=self.T)

    def crop(self, index: int) -> tuple[CineSequence, dict]:
        """Normalised LV crop of phantom *index* and its ground truth."""
        seq, truth = generate_phantom(self.config(index), f"{self.name}{index:05d}")
        r = self.roi
        roi = extract_roi(seq, size=r.size, r_min=r.r_min, r_max=r.r_max, top_k=r.top_k, sigma_px=r.sigma_px)
        truth = dict(truth, roi_center=[int(roi.center[0]), int(roi.center[1])])
        return normalize(roi.crop), truth


@dataclass(frozen=True)
class Sample:
    seq: CineSequence
    label: QualityLabel
    source: str

    @property
    def id(self) -> str:
        return self.seq.id

    @property
    def y(self) -> int:
        return self.label.label


def clean_sample(family: PhantomFamily, index: int) -> Sample:
    crop, _ = family.crop(index)
    return Sample(crop, QualityLabel(0, Provenance.REAL), crop.id)


def corrupted_sample(base: CineSequence, artefact_type: ArtefactType | str, severity: int,
                     master_seed: int, table: SeverityTable = DEFAULT_TABLE) -> Sample:
    """Corrupt a clean crop; the corruption stream is keyed by the new sample id."""
    kind = ArtefactType(artefact_type)
    new_id = f"{base.id}_{kind.value[0]}{severity:02d}"
    rng = RngStream(master_seed).child(f"corrupt/{new_id}")
    out, label = apply_severity(base, kind, severity, table, rng)
    return Sample(normalize(out.with_frames(out.frames, id=new_id)), label, base.id)


def synthetic_set(family: PhantomFamily, severities: Sequence[int], per_severity: int,
                  table: SeverityTable = DEFAULT_TABLE, start: int = 0) -> dict[int, list[Sample]]:
    """``per_severity`` corrupted crops for each level, each from its own phantom.

    Artefact types alternate within a level, and the starting type alternates
    between levels, so both types are represented evenly overall.
    """
    out: dict[int, list[Sample]] = {}
    index = start
    for j, s in enumerate(severities):
        out[s] = []
        for i, kind in enumerate(alternating_types(per_severity, offset=j)):
            base, _ = family.crop(index)
            out[s].append(corrupted_sample(base, kind, s, family.master_seed, table))
            index += 1
    return out


def stack(samples: Sequence[Sample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.seq.frames for s in samples]).astype(np.float32)
    y = np.array([s.y for s in samples], dtype=np.float64)
    return x, y


def alternating_types(n: int, offset: int = 0) -> list[ArtefactType]:
    return [ARTEFACT_TYPES[(i + offset) % 2] for i in range(n)]
