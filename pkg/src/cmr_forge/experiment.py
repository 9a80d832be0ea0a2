"""Desk-scale curriculum comparison: data assembly, training runs and reports.

One experiment trains the same architecture under the curriculum, anti and
control schedules for several seeds on an identical sample pool and scores
a held-out test set of subtle artefacts (high severity indices) plus clean
crops.
"""

from __future__ import annotations

import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .cine_io import write_json
from .classifier.model import ArchDescriptor, default_arch, init_model, predict_proba
from .classifier.train import TrainConfig
from .curriculum import Mode, build_schedule, multiset_digest, run_curriculum
from .data import PhantomFamily, RoiParams, Sample, clean_sample, stack, synthetic_set
from .kspace import SeverityTable
from .metrics import auc_score, delong_test, evaluate_scores, variance_of_laplacian

log = logging.getLogger(__name__)

REPORT_SCHEMA = 1


def _from_section(cls, d: Optional[dict], section: str):
    d = dict(d or {})
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"[{section}] unknown keys: {sorted(unknown)}")
    return cls(**d)


@dataclass(frozen=True)
class PhantomSection:
    grid: tuple[int, int] = (192, 192)
    T: int = 50
    n_real_train: int = 40
    n_synthetic_per_severity: int = 4
    n_val_clean: int = 20
    n_val_per_severity: int = 2
    n_test_clean: int = 20
    n_test_per_severity: int = 5
    test_severities: tuple[int, ...] = (7, 8, 9, 10)

    def __post_init__(self) -> None:
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "test_severities", tuple(self.test_severities))
        counts = (self.n_real_train, self.n_synthetic_per_severity, self.n_val_clean,
                  self.n_val_per_severity, self.n_test_clean, self.n_test_per_severity)
        if min(counts) < 1:
            raise ValueError("[phantom] every sample count must be >= 1")
        if self.T < 2:
            raise ValueError("[phantom] T must be >= 2")


@dataclass(frozen=True)
class CurriculumSection:
    modes: tuple[str, ...] = ("curriculum", "anti", "control")
    epochs_per_stage: int = 2
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    arch: str = "lrcn"
    init_mode: str = "scaled"

    def __post_init__(self) -> None:
        object.__setattr__(self, "modes", tuple(Mode(m).value for m in self.modes))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.epochs_per_stage < 1:
            raise ValueError("[curriculum] epochs_per_stage must be >= 1")
        if not self.seeds:
            raise ValueError("[curriculum] at least one seed is required")
        if Mode.CURRICULUM.value not in self.modes:
            raise ValueError("[curriculum] the curriculum mode is the reference and must be run")


@dataclass(frozen=True)
class EvalSection:
    k: int = 10
    repeats: int = 1
    threshold: float = 0.5

    def __post_init__(self) -> None:
        if self.k < 2 or self.repeats < 1:
            raise ValueError("[eval] need k >= 2 and repeats >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int
    output_dir: str = "experiment_out"
    phantom: PhantomSection = field(default_factory=PhantomSection)
    corruption: SeverityTable = field(default_factory=SeverityTable)
    roi: RoiParams = field(default_factory=RoiParams)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(lr=0.01, batch_size=16, grad_clip=1.0))
    curriculum: CurriculumSection = field(default_factory=CurriculumSection)
    eval: EvalSection = field(default_factory=EvalSection)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if "master_seed" not in d:
            raise ValueError("experiment config needs master_seed")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown experiment config keys: {sorted(unknown)}")
        corr = dict(d.get("corruption") or {})
        for key in ("z", "amplitude_px", "frame_offset_range"):
            if key in corr:
                corr[key] = tuple(corr[key])
        train = dict(d.get("train") or {})
        base = TrainConfig(lr=0.01, batch_size=16, grad_clip=1.0).to_dict()
        base.update(train)
        return cls(
            master_seed=int(d["master_seed"]),
            output_dir=str(d.get("output_dir", "experiment_out")),
            phantom=_from_section(PhantomSection, d.get("phantom"), "phantom"),
            corruption=_from_section(SeverityTable, corr, "corruption"),
            roi=_from_section(RoiParams, d.get("roi"), "roi"),
            train=TrainConfig.from_dict(base),
            curriculum=_from_section(CurriculumSection, d.get("curriculum"), "curriculum"),
            eval=_from_section(EvalSection, d.get("eval"), "eval"),
        )

    def to_dict(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "output_dir": self.output_dir,
            "phantom": _plain(asdict(self.phantom)),
            "corruption": _plain(asdict(self.corruption)),
            "roi": asdict(self.roi),
            "train": self.train.to_dict(),
            "curriculum": _plain(asdict(self.curriculum)),
            "eval": asdict(self.eval),
        }

    def arch(self) -> ArchDescriptor:
        r = self.roi.size
        return default_arch(self.curriculum.arch, (self.phantom.T, r, r))


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass
class Benchmark:
    real_train: list[Sample]
    synthetic: dict[int, list[Sample]]
    val: list[Sample]
    test: list[Sample]

    def lookup(self) -> dict[str, tuple[np.ndarray, float]]:
        out = {s.id: (s.seq.frames, float(s.y)) for s in self.real_train}
        for level in self.synthetic.values():
            out.update({s.id: (s.seq.frames, float(s.y)) for s in level})
        return out

    def pool_ids(self) -> list[str]:
        return [s.id for s in self.real_train] + [s.id for lv in self.synthetic.values() for s in lv]


def build_benchmark(cfg: ExperimentConfig) -> Benchmark:
    """Disjoint phantom families for training, synthetic, validation and test data."""
    p, table = cfg.phantom, cfg.corruption

    def family(name: str) -> PhantomFamily:
        return PhantomFamily(name, cfg.master_seed, p.grid, p.T, cfg.roi)

    levels = list(range(1, table.b + 1))
    real = [clean_sample(family("real"), i) for i in range(p.n_real_train)]
    synthetic = synthetic_set(family("syn"), levels, p.n_synthetic_per_severity, table)
    val = [clean_sample(family("valc"), i) for i in range(p.n_val_clean)]
    val += [s for lv in synthetic_set(family("vals"), levels, p.n_val_per_severity, table).values() for s in lv]
    test = [clean_sample(family("testc"), i) for i in range(p.n_test_clean)]
    hard = synthetic_set(family("tests"), list(p.test_severities), p.n_test_per_severity, table)
    test += [s for lv in hard.values() for s in lv]
    return Benchmark(real, synthetic, val, test)


def _report(mode: str, seeds, per_seed_auc, scores, labels, cfg: ExperimentConfig,
            reference_name: str, reference_scores, digests: dict, ids, per_seed) -> dict:
    ev = cfg.eval
    rep = evaluate_scores(scores, labels, k=ev.k, seed=cfg.master_seed, threshold=ev.threshold,
                          compare_scores=reference_scores, repeats=ev.repeats)
    out = rep.to_json()
    out.update({
        "mode": mode,
        "seeds": list(seeds),
        "per_seed_auc": [float(a) for a in per_seed_auc],
        "mean_auc": float(np.mean(per_seed_auc)),
        "delong_reference": reference_name,
        "multisets": digests,
        "test_ids": list(ids),
        "test_scores": [float(s) for s in scores],
        "per_seed": per_seed,
    })
    return out


def run_experiment(cfg: ExperimentConfig, out_dir: str | os.PathLike | None = None) -> dict:
    """Run every mode and seed, write one report per mode and a summary; return the summary."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    bench = build_benchmark(cfg)
    lookup = bench.lookup()
    x_val, y_val = stack(bench.val)
    x_test, y_test = stack(bench.test)
    sets = {s: [smp.id for smp in lv] for s, lv in bench.synthetic.items()}
    real_ids = [s.id for s in bench.real_train]
    arch = cfg.arch()
    cc = cfg.curriculum

    scores: dict[str, list[np.ndarray]] = {m: [] for m in cc.modes}
    per_seed: dict[str, list[dict]] = {m: [] for m in cc.modes}
    digests: dict[str, dict] = {}
    for seed in cc.seeds:
        tcfg = TrainConfig.from_dict(dict(cfg.train.to_dict(), seed=seed))
        for mode in cc.modes:
            schedule = build_schedule(sets, mode, cc.epochs_per_stage, seed)
            model = init_model(arch, cc.init_mode, seed)
            res = run_curriculum(model, schedule, lookup, real_ids, (x_val, y_val), tcfg)
            p = predict_proba(res.model, x_test, tcfg.chunk)
            scores[mode].append(p)
            auc = auc_score(p, y_test)
            log.info("seed %d %s: test auc %.4f (best stage %d)", seed, mode, auc, res.best_stage)
            per_seed[mode].append({"seed": seed, "test_auc": auc, "best_stage": res.best_stage,
                                   "best_epoch": res.best_epoch, "best_val_ba": res.best_metric,
                                   "stages": [s.to_dict() for s in res.stages]})
            digests.setdefault(mode, {"train_pool": res.pool_digest})

    test_ids = [s.id for s in bench.test]
    for mode in cc.modes:
        digests[mode].update({"test": multiset_digest(test_ids),
                              "val": multiset_digest(s.id for s in bench.val)})

    baseline = -np.array([variance_of_laplacian(s.seq) for s in bench.test])
    mean_scores = {m: np.mean(scores[m], axis=0) for m in cc.modes}
    reports = {}
    for mode in cc.modes:
        if mode == Mode.CURRICULUM.value:
            ref_name, ref = "variance_of_laplacian", baseline
        else:
            ref_name, ref = Mode.CURRICULUM.value, mean_scores[Mode.CURRICULUM.value]
        aucs = [d["test_auc"] for d in per_seed[mode]]
        reports[mode] = _report(mode, cc.seeds, aucs, mean_scores[mode], y_test, cfg, ref_name, ref,
                                digests[mode], test_ids, per_seed[mode])
        write_json(out / f"report_{mode}.json", reports[mode])

    cur = Mode.CURRICULUM.value
    summary = {
        "schema": REPORT_SCHEMA,
        "mean_auc": {m: reports[m]["mean_auc"] for m in cc.modes},
        "baseline_auc": auc_score(baseline, y_test),
        "delong_p": {f"{cur}_vs_{m}": delong_test(mean_scores[cur], mean_scores[m], y_test).p_value
                     for m in cc.modes if m != cur},
        "ordering": {f"{cur}>={m}": reports[cur]["mean_auc"] >= reports[m]["mean_auc"]
                     for m in cc.modes if m != cur},
        "identical_pools": len({digests[m]["train_pool"] for m in cc.modes}) == 1,
        "n": {"real_train": len(real_ids), "synthetic": sum(len(v) for v in sets.values()),
              "val": len(bench.val), "test": len(bench.test)},
    }
    write_json(out / "summary.json", summary)
    return summary
