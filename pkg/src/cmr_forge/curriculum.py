"""Baby-step curriculum over severity-ordered synthetic subsets, plus the
reversed (anti) and shuffled (control) baselines."""

from __future__ import annotations

import enum
import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Optional, Sequence

import numpy as np

from .classifier.model import ClassifierModel
from .classifier.train import TrainConfig, TrainHistory, _Tracker, run_epochs
from .rng import RngStream


class Mode(str, enum.Enum):
    CURRICULUM = "curriculum"
    ANTI = "anti"
    CONTROL = "control"


@dataclass(frozen=True)
class CurriculumSchedule:
    """Ordered stages of sample keys; stage ``i`` is added before training block ``i``."""

    stages: tuple[tuple[Hashable, ...], ...]
    k: int
    mode: Mode
    seed: int = 0
    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.stages) < 1:
            raise ValueError("a schedule needs at least one stage")
        if self.k < 1:
            raise ValueError("epochs per stage must be >= 1")
        seen: set = set()
        for stage in self.stages:
            if seen.intersection(stage):
                raise ValueError("stages must be disjoint")
            seen.update(stage)

    @property
    def b(self) -> int:
        return len(self.stages)

    def pooled(self) -> list[Hashable]:
        return [key for stage in self.stages for key in stage]


def build_schedule(sets_by_severity: Mapping[int, Sequence[Hashable]], mode: Mode | str,
                   k: int = 10, seed: int = 0) -> CurriculumSchedule:
    """Stage the synthetic subsets.

    ``curriculum`` runs severity 1 (heaviest corruption, easiest) first,
    ``anti`` runs it last and ``control`` deals the pooled keys into ``b``
    random parts whose sizes differ by at most one.
    """
    mode = Mode(mode)
    levels = sorted(sets_by_severity)
    b = len(levels)
    if levels != list(range(1, b + 1)):
        missing = sorted(set(range(1, max(levels, default=0) + 1)) - set(levels))
        raise ValueError(f"severities must form 1..b; missing {missing or 'level 1'}")
    if mode is Mode.CONTROL:
        pooled = [key for s in levels for key in sets_by_severity[s]]
        g = RngStream(seed).child("control-partition").generator()
        perm = g.permutation(len(pooled))
        parts = np.array_split(perm, b)
        stages = tuple(tuple(pooled[i] for i in np.sort(p)) for p in parts)
        labels = tuple(f"part{i + 1}" for i in range(b))
    else:
        order = levels if mode is Mode.CURRICULUM else levels[::-1]
        stages = tuple(tuple(sets_by_severity[s]) for s in order)
        labels = tuple(f"severity{s}" for s in order)
    return CurriculumSchedule(stages, k, mode, seed, labels)


def multiset_digest(keys) -> str:
    """Order-independent SHA-256 of a multiset of string keys."""
    counts = Counter(str(k) for k in keys)
    h = hashlib.sha256()
    for key in sorted(counts):
        h.update(f"{key}\t{counts[key]}\n".encode())
    return h.hexdigest()


@dataclass
class StageRecord:
    label: str
    pool_size: int
    history: TrainHistory = field(default_factory=TrainHistory)

    def to_dict(self) -> dict:
        return {"stage": self.label, "pool_size": self.pool_size, **self.history.to_dict()}


@dataclass
class CurriculumResult:
    model: ClassifierModel
    stages: list[StageRecord]
    best_stage: int
    best_epoch: int
    best_metric: float
    pool_digest: str

    def to_dict(self) -> dict:
        return {"best_stage": self.best_stage, "best_epoch": self.best_epoch,
                "best_metric": self.best_metric, "pool_digest": self.pool_digest,
                "stages": [s.to_dict() for s in self.stages]}


def run_curriculum(model: ClassifierModel, schedule: CurriculumSchedule,
                   samples: Mapping[Hashable, tuple[np.ndarray, float]],
                   real_train: Sequence[Hashable], val_set, cfg: TrainConfig) -> CurriculumResult:
    """Accumulate stages onto the real pool and train ``k`` epochs after each.

    *samples* maps every key (real and synthetic) to ``(frames, label)``.
    The model is trained in place; the returned snapshot is the best on
    validation across all stages (patience is not applied between stages).
    """
    x_val, y_val = val_set
    pool = list(real_train)
    members = set(pool)
    tracker = _Tracker(cfg.min_rel_improvement)
    # same stream as plain training, so a single stage reproduces ``fit`` exactly
    stream = RngStream(cfg.seed).child("train")
    records: list[StageRecord] = []
    step = 0
    for i, stage in enumerate(schedule.stages):
        if members.intersection(stage):
            raise ValueError(f"stage {i} repeats samples already in the pool")
        pool.extend(stage)
        members.update(stage)
        label = schedule.labels[i] if schedule.labels else f"stage{i + 1}"
        rec = StageRecord(label, len(pool))
        if pool:
            x = np.stack([samples[key][0] for key in pool])
            y = np.array([samples[key][1] for key in pool], dtype=np.float64)
            step += run_epochs(model, x, y, x_val, y_val, cfg, schedule.k, stream, tracker,
                               rec.history, step0=step, tag=i, early_stop=False)
        records.append(rec)
    if tracker.best_model is None:
        raise ValueError("nothing was trained: empty pool")
    best_stage, best_epoch = tracker.best_tag
    records[best_stage].history.best_epoch = best_epoch
    return CurriculumResult(tracker.best_model, records, best_stage, best_epoch,
                            tracker.best_metric, multiset_digest(pool))
