"""``forge`` command line: data generation, corruption, ROI, training, curricula, evaluation.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .cine_io import (LABELS_FILE, CineFormatError, dump_json, load_items, write_cine, write_json,
                      write_manifest)
from .classifier.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .classifier.model import default_arch, init_model, predict_proba
from .classifier.train import TrainConfig, fit
from .curriculum import Mode, build_schedule, run_curriculum
from .data import PhantomFamily, RoiParams
from .experiment import ExperimentConfig, run_experiment
from .kspace import DEFAULT_TABLE, apply_severity
from .metrics import evaluate_scores, variance_of_laplacian
from .phantom import config_to_dict, generate_phantom
from .rng import RngStream
from .roi import extract_roi
from .types import ArtefactType, CineSequence, LabeledItem, QualityLabel, normalize

log = logging.getLogger("forge")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SCHEMA = 1


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _env_seed() -> int:
    raw = os.environ.get("FORGE_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"FORGE_SEED must be an integer, got {raw!r}") from None


def _seed(args) -> int:
    return args.seed if args.seed is not None else _env_seed()


def _config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


def write_run_manifest(out_dir: Path, command: str, config: dict, seed: int) -> None:
    """Provenance record for a run; free of paths and timestamps so reruns match."""
    write_json(out_dir / "manifest.json", {
        "schema": SCHEMA,
        "command": command,
        "config": config,
        "config_hash": _config_hash(config),
        "seed": seed,
        "version": __version__,
    })


def _read_json(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _labelled(dirs: Sequence[str]) -> list[tuple[LabeledItem, CineSequence]]:
    items = []
    for d in dirs:
        items.extend(load_items(d))
    if not items:
        raise ValueError("no sequences found in " + ", ".join(dirs))
    return items


def _xy(items) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.frames for _, s in items]).astype(np.float32)
    y = np.array([it.label.label for it, _ in items], dtype=np.float64)
    return x, y


# subcommands

def cmd_phantom(args) -> dict:
    seed, out = _seed(args), Path(args.out)
    fam = PhantomFamily("phantom", seed, tuple(args.grid), args.T)
    items = []
    for i in range(args.n):
        cfg = fam.config(i)
        seq, truth = generate_phantom(cfg, f"phantom{i:05d}")
        write_cine(seq, out / f"{seq.id}.cine")
        write_json(out / f"{seq.id}.json", dict(truth, schema=SCHEMA, config=_jsonable(config_to_dict(cfg))))
        items.append(LabeledItem(seq.id, f"{seq.id}.cine", QualityLabel(0)))
    write_manifest(items, out / LABELS_FILE)
    return {"n": args.n, "grid": list(args.grid), "T": args.T}


def _jsonable(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def cmd_corrupt(args) -> dict:
    seed, out = _seed(args), Path(args.out)
    kind = ArtefactType(args.type)
    items = []
    for item, seq in _labelled([args.inp]):
        new_id = f"{item.id}_{kind.value[0]}{args.severity:02d}"
        rng = RngStream(seed).child(f"corrupt/{new_id}")
        res, label = apply_severity(normalize(seq), kind, args.severity, DEFAULT_TABLE, rng)
        res = normalize(res.with_frames(res.frames, id=new_id))
        write_cine(res, out / f"{new_id}.cine")
        items.append(LabeledItem(new_id, f"{new_id}.cine", label))
    write_manifest(items, out / LABELS_FILE)
    return {"type": kind.value, "severity": args.severity}


def cmd_roi(args) -> dict:
    out = Path(args.out)
    params = RoiParams(args.size, args.r_min, args.r_max, args.top_k, args.sigma)
    items = []
    for item, seq in _labelled([args.inp]):
        res = extract_roi(seq, params.size, params.r_min, params.r_max, params.top_k, params.sigma_px)
        crop = normalize(res.crop.with_frames(res.crop.frames, id=item.id))
        write_cine(crop, out / f"{item.id}.cine")
        write_json(out / f"{item.id}.roi.json",
                   {"schema": SCHEMA, "id": item.id, "center": [int(res.center[0]), int(res.center[1])]})
        items.append(LabeledItem(item.id, f"{item.id}.cine", item.label))
    write_manifest(items, out / LABELS_FILE)
    return {"roi": params.__dict__}


def _train_config(path: Optional[str], seed: int) -> tuple[TrainConfig, str]:
    raw = _read_json(path) if path else {}
    init_mode = raw.pop("init_mode", "scaled")
    raw["seed"] = seed
    return TrainConfig.from_dict(raw), init_mode


def cmd_train(args) -> dict:
    seed = _seed(args)
    cfg, init_mode = _train_config(args.config, seed)
    train_items, val_items = _labelled(args.train), _labelled(args.val)
    x, y = _xy(train_items)
    arch = default_arch(args.arch, tuple(x.shape[1:]))
    model = init_model(arch, init_mode, seed)
    best, hist = fit(model, (x, y), _xy(val_items), cfg)
    out = Path(args.out)
    save_checkpoint(best, out)
    write_json(out.with_name(out.name + ".history.json"), dict(hist.to_dict(), schema=SCHEMA))
    return {"arch": args.arch, "train": cfg.to_dict(), "init_mode": init_mode}


def cmd_curriculum(args) -> dict:
    seed = _seed(args)
    cfg, init_mode = _train_config(args.config, seed)
    real, synth, val = _labelled(args.real), _labelled(args.synthetic), _labelled(args.val)
    by_sev: dict[int, list[str]] = {}
    for item, _ in synth:
        if item.label.severity is None:
            raise ValueError(f"{item.id}: synthetic sample without a severity level")
        by_sev.setdefault(item.label.severity, []).append(item.id)
    if sorted(by_sev) != list(range(1, args.stages + 1)):
        raise ValueError(f"synthetic severities {sorted(by_sev)} do not form 1..{args.stages}")
    lookup = {it.id: (s.frames, float(it.label.label)) for it, s in real + synth}
    if len(lookup) != len(real) + len(synth):
        raise ValueError("duplicate sample ids across --real and --synthetic")
    schedule = build_schedule(by_sev, args.mode, args.epochs_per_stage, seed)
    arch = default_arch(args.arch, tuple(real[0][1].shape))
    model = init_model(arch, init_mode, seed)
    res = run_curriculum(model, schedule, lookup, [it.id for it, _ in real], _xy(val), cfg)
    out = Path(args.out)
    save_checkpoint(res.model, out / "model.ckpt")
    write_json(out / "stages.json", dict(res.to_dict(), schema=SCHEMA, mode=schedule.mode.value,
                                         epochs_per_stage=schedule.k))
    return {"arch": args.arch, "mode": args.mode, "stages": args.stages,
            "epochs_per_stage": args.epochs_per_stage, "train": cfg.to_dict(), "init_mode": init_mode}


def _scores(ckpt: Optional[str], items) -> np.ndarray:
    if ckpt is None:
        # blur baseline: lower variance of Laplacian means more likely corrupted
        return -np.array([variance_of_laplacian(s) for _, s in items])
    return predict_proba(load_checkpoint(ckpt), _xy(items)[0])


def cmd_eval(args) -> dict:
    seed = _seed(args)
    items = _labelled([args.inp])
    _, y = _xy(items)
    scores = _scores(args.ckpt, items)
    compare = None
    if args.compare_ckpt or args.compare_baseline:
        compare = _scores(args.compare_ckpt, items)
    threshold = args.threshold if args.ckpt else float(np.median(scores))
    rep = evaluate_scores(scores, y, k=args.k, seed=seed, threshold=threshold,
                          compare_scores=compare, repeats=args.repeats)
    write_json(Path(args.out) / "eval.json", dict(rep.to_json(), ids=[it.id for it, _ in items],
                                                  scores=[float(s) for s in scores]))
    return {"k": args.k, "repeats": args.repeats, "threshold": threshold,
            "scorer": "checkpoint" if args.ckpt else "variance_of_laplacian",
            "compare": "checkpoint" if args.compare_ckpt else ("variance_of_laplacian" if compare is not None else None)}


def cmd_experiment(args) -> dict:
    raw = _read_json(args.config)
    if args.seed is not None:
        raw["master_seed"] = args.seed
    elif "master_seed" not in raw and "FORGE_SEED" in os.environ:
        raw["master_seed"] = _env_seed()
    cfg = ExperimentConfig.from_dict(raw)
    if args.out is None:
        args.out = cfg.output_dir
    summary = run_experiment(cfg, args.out)
    print(dump_json(summary), end="")
    return {"experiment": {k: v for k, v in cfg.to_dict().items() if k != "output_dir"},
            "seed": cfg.master_seed}


COMMANDS = {
    "phantom": cmd_phantom,
    "corrupt": cmd_corrupt,
    "roi": cmd_roi,
    "train": cmd_train,
    "curriculum-run": cmd_curriculum,
    "eval": cmd_eval,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="forge", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="numeric library thread cap")
    p.add_argument("--log-level", default="WARNING")
    p.add_argument("--version", action="version", version=f"forge {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=None, help="overrides FORGE_SEED")
        return sp

    sp = add("phantom", "render synthetic cine phantoms")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--grid", type=int, nargs=2, default=(192, 192), metavar=("H", "W"))
    sp.add_argument("--T", type=int, default=50)
    sp.add_argument("--out", required=True)

    sp = add("corrupt", "apply a k-space artefact at one severity level")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--type", choices=[t.value for t in ArtefactType], required=True)
    sp.add_argument("--severity", type=int, required=True)
    sp.add_argument("--out", required=True)

    sp = add("roi", "locate the left ventricle and crop")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--size", type=int, default=80)
    sp.add_argument("--r-min", type=int, default=8)
    sp.add_argument("--r-max", type=int, default=30)
    sp.add_argument("--top-k", type=int, default=10)
    sp.add_argument("--sigma", type=float, default=5.0)
    sp.add_argument("--out", required=True)

    sp = add("train", "train a classifier with early stopping")
    sp.add_argument("--arch", choices=["cnn3d", "lrcn"], required=True)
    sp.add_argument("--config", help="JSON training config")
    sp.add_argument("--train", nargs="+", required=True, help="labelled directories")
    sp.add_argument("--val", nargs="+", required=True)
    sp.add_argument("--out", required=True, help="checkpoint path")

    sp = add("curriculum-run", "staged training over severity subsets")
    sp.add_argument("--mode", choices=[m.value for m in Mode], required=True)
    sp.add_argument("--stages", type=int, required=True)
    sp.add_argument("--epochs-per-stage", type=int, default=10)
    sp.add_argument("--arch", choices=["cnn3d", "lrcn"], default="lrcn")
    sp.add_argument("--config", help="JSON training config")
    sp.add_argument("--real", nargs="+", required=True)
    sp.add_argument("--synthetic", nargs="+", required=True)
    sp.add_argument("--val", nargs="+", required=True)
    sp.add_argument("--out", required=True)

    sp = add("eval", "cross-validated metrics, ROC and DeLong comparison")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--ckpt", help="model checkpoint; the blur baseline scores when omitted")
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--compare-ckpt")
    g.add_argument("--compare-baseline", action="store_true")
    sp.add_argument("--k", type=int, default=10)
    sp.add_argument("--repeats", type=int, default=1)
    sp.add_argument("--threshold", type=float, default=0.5)
    sp.add_argument("--out", required=True)

    sp = add("experiment", "curriculum vs anti vs control comparison")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", default=None, help="defaults to the config's output_dir")
    return p


def _manifest_args(args) -> dict:
    skip = {"out", "threads", "log_level", "command", "seed", "inp", "train", "val", "real",
            "synthetic", "ckpt", "compare_ckpt", "config"}
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(args).items() if k not in skip}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("forge: a subcommand is required")
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                            format="%(levelname)s %(name)s: %(message)s")
        seed = _seed(args)
        with threadpool_limits(limits=args.threads):
            extra = COMMANDS[args.command](args)
        if args.command == "experiment":
            seed = extra.pop("seed")
        config = dict(_manifest_args(args), **extra)
        out = Path(args.out)
        write_run_manifest(out.parent if args.command == "train" else out, args.command, config, seed)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"forge: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CineFormatError, CheckpointError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"forge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
