"""Mini-batch SGD training with validation-driven early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict, fields
from typing import Optional

import numpy as np

from ..kspace import translate
from ..metrics import auc_score, confusion_and_metrics
from ..rng import RngStream
from .model import ClassifierModel, batch_loss, loss, loss_and_grads, predict_proba, sgd_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 50
    patience_epochs: int = 100
    min_rel_improvement: float = 0.005
    max_epochs: int = 300
    class_weights: Optional[tuple[float, float]] = None
    augment: bool = False
    grad_clip: Optional[float] = None
    seed: int = 0
    chunk: int = 8

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience_epochs < 1:
            raise ValueError("batch_size, max_epochs and patience_epochs must be >= 1")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive")
        if self.class_weights is not None:
            object.__setattr__(self, "class_weights", tuple(float(w) for w in self.class_weights))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_weights"] = list(self.class_weights) if self.class_weights else None
        return d


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_auc: list[Optional[float]] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def best_metric(self) -> float:
        return self.val_metric[self.best_epoch]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _Tracker:
    """Best-checkpoint and patience bookkeeping, shared across curriculum stages."""

    min_rel: float
    best_metric: float = -np.inf
    best_loss: float = np.inf
    best_model: Optional[ClassifierModel] = None
    best_tag: object = None
    ref_metric: Optional[float] = None
    last_improvement: int = 0

    def update(self, model: ClassifierModel, metric: float, vloss: float, step: int, tag=None) -> bool:
        # checkpoint: highest validation metric, lower validation loss breaks ties
        if metric > self.best_metric or (metric == self.best_metric and vloss < self.best_loss):
            self.best_metric, self.best_loss = metric, vloss
            self.best_model = model.copy()
            self.best_tag = tag
        # patience resets only on a sufficient relative improvement
        if self.ref_metric is None or (metric > self.ref_metric
                                       and metric >= self.ref_metric * (1.0 + self.min_rel)):
            self.ref_metric = metric
            self.last_improvement = step
            return True
        return False


def validation_scores(model: ClassifierModel, x_val, y_val, chunk: int = 8) -> tuple[float, float, Optional[float]]:
    """(balanced accuracy at 0.5, mean loss, AUC or None) on a validation set."""
    p = predict_proba(model, x_val, chunk)
    _, m = confusion_and_metrics(p, y_val)
    y = np.asarray(y_val)
    auc = auc_score(p, y) if 0 < y.sum() < y.size else None
    return m.balanced_accuracy, loss(p, y), auc


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Rescale *grads* in place so their global L2 norm is at most *max_norm*."""
    norm = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


def _augment(xb: np.ndarray, g: np.random.Generator) -> np.ndarray:
    out = np.empty_like(xb)
    H, W = xb.shape[-2:]
    for i in range(xb.shape[0]):
        dy = int(g.integers(-(H // 5), H // 5 + 1))
        dx = int(g.integers(-(W // 5), W // 5 + 1))
        out[i] = translate(xb[i], dy, dx)
    return out


def run_epochs(model: ClassifierModel, x, y, x_val, y_val, cfg: TrainConfig, n_epochs: int,
               rng: RngStream, tracker: _Tracker, history: TrainHistory, step0: int = 0,
               tag=None, early_stop: bool = True) -> int:
    """Train *model* in place for up to *n_epochs*; returns the number run."""
    x = np.asarray(x)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[0]
    for e in range(n_epochs):
        step = step0 + e
        g = rng.child(f"epoch{step}").generator()
        order = g.permutation(n)
        running = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = np.sort(order[s:s + cfg.batch_size])
            xb = x[idx]
            if cfg.augment:
                xb = _augment(xb, g)
            l, grads = loss_and_grads(model, xb, y[idx], cfg.class_weights, g, True, cfg.chunk)
            if cfg.grad_clip is not None:
                clip_gradients(grads, cfg.grad_clip)
            sgd_step(model, grads, cfg.lr, cfg.momentum)
            running += l * idx.size
        model.epoch += 1
        metric, vloss, vauc = validation_scores(model, x_val, y_val, cfg.chunk)
        history.train_loss.append(running / n)
        history.val_metric.append(metric)
        history.val_loss.append(vloss)
        history.val_auc.append(vauc)
        tracker.update(model, metric, vloss, step, tag=(tag, len(history.val_metric) - 1))
        log.info("epoch %d loss %.4f val_ba %.3f val_loss %.4f", step, running / n, metric, vloss)
        if early_stop and step - tracker.last_improvement >= cfg.patience_epochs:
            history.stopped_early = True
            return e + 1
    return n_epochs


def fit(model: ClassifierModel, train_set, val_set, cfg: TrainConfig) -> tuple[ClassifierModel, TrainHistory]:
    """Train *model* in place; return the best-validation snapshot and the history."""
    x, y = train_set
    x_val, y_val = val_set
    if len(y) == 0 or len(y_val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    tracker = _Tracker(cfg.min_rel_improvement)
    history = TrainHistory()
    run_epochs(model, x, y, x_val, y_val, cfg, cfg.max_epochs, RngStream(cfg.seed).child("train"),
               tracker, history)
    history.best_epoch = tracker.best_tag[1]
    return tracker.best_model, history


def train(model: ClassifierModel, train_set, val_set, cfg: TrainConfig) -> tuple[ClassifierModel, TrainHistory]:
    """Train a copy of *model*; the argument is left untouched."""
    return fit(model.copy(), train_set, val_set, cfg)


def training_loss(model: ClassifierModel, data, class_weights=None, chunk: int = 8) -> float:
    x, y = data
    return batch_loss(model, x, y, class_weights, chunk)
