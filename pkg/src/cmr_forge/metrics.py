"""Confusion metrics, ROC/AUC, DeLong's test, stratified folds and a blur baseline.

Balanced accuracy follows the artefact-detection literature this toolkit
reproduces: the mean of precision and recall, *not* the mean of sensitivity
and specificity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage, stats

from .rng import as_generator
from .types import CineSequence

LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class ConfusionCounts:
    TP: int
    FP: int
    FN: int
    TN: int

    @property
    def total(self) -> int:
        return self.TP + self.FP + self.FN + self.TN


@dataclass
class Metrics:
    accuracy: float
    precision: float
    recall: float
    balanced_accuracy: float
    undefined: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"acc": self.accuracy, "prec": self.precision, "rec": self.recall,
                "ba": self.balanced_accuracy}


def _ratio(num: int, den: int, name: str, undefined: list[str]) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def metrics_from_counts(c: ConfusionCounts) -> Metrics:
    undefined: list[str] = []
    acc = _ratio(c.TP + c.TN, c.total, "accuracy", undefined)
    prec = _ratio(c.TP, c.TP + c.FP, "precision", undefined)
    rec = _ratio(c.TP, c.TP + c.FN, "recall", undefined)
    return Metrics(acc, prec, rec, (prec + rec) / 2.0, undefined)


def _check_binary(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if scores.size == 0:
        raise ValueError("no items to evaluate")
    if scores.shape != labels.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be 0 or 1")
    return scores, labels.astype(np.int64)


def confusion_counts(scores, labels, threshold: float = 0.5) -> ConfusionCounts:
    scores, labels = _check_binary(scores, labels)
    pred = scores >= threshold
    pos = labels == 1
    return ConfusionCounts(TP=int(np.sum(pred & pos)), FP=int(np.sum(pred & ~pos)),
                           FN=int(np.sum(~pred & pos)), TN=int(np.sum(~pred & ~pos)))


def confusion_and_metrics(scores, labels, threshold: float = 0.5) -> tuple[ConfusionCounts, Metrics]:
    """Counts at ``score >= threshold`` and the derived ratios.

    Ratios with a zero denominator are reported as 0 and listed in
    ``Metrics.undefined``.
    """
    c = confusion_counts(scores, labels, threshold)
    return c, metrics_from_counts(c)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray

    def points(self) -> list[list[float]]:
        return [[float(f), float(t)] for f, t in zip(self.fpr, self.tpr)]


def _both_classes(labels: np.ndarray) -> tuple[int, int]:
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC analysis needs both classes present")
    return n_pos, n_neg


def roc_curve(scores, labels) -> RocCurve:
    """ROC swept over every distinct score, highest threshold first."""
    scores, labels = _check_binary(scores, labels)
    n_pos, n_neg = _both_classes(labels)
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    # last index of each run of equal scores
    cut = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tp = np.cumsum(y)[cut]
    fp = (cut + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thr = np.r_[np.inf, s[cut]]
    return RocCurve(fpr, tpr, thr)


def roc_auc(scores, labels) -> tuple[RocCurve, float]:
    curve = roc_curve(scores, labels)
    auc = float(np.sum(np.diff(curve.fpr) * (curve.tpr[1:] + curve.tpr[:-1]) / 2.0))
    return curve, auc


def auc_score(scores, labels) -> float:
    return roc_auc(scores, labels)[1]


def _midrank(x: np.ndarray) -> np.ndarray:
    return stats.rankdata(x, method="average")


@dataclass
class DelongResult:
    auc_a: float
    auc_b: float
    p_value: float
    z: float
    variance: float
    degenerate: bool = False

    def as_dict(self) -> dict:
        return {"auc_a": self.auc_a, "auc_b": self.auc_b, "p": self.p_value}


def delong_components(scores, labels) -> tuple[float, np.ndarray, np.ndarray]:
    """AUC and the structural components (placement values) for one classifier.

    ``v10[i]`` is the fraction of negatives beaten by positive ``i`` and
    ``v01[j]`` the fraction of positives beating negative ``j``; ties count
    one half.  Computed from midranks, O(n log n).
    """
    scores, labels = _check_binary(scores, labels)
    n_pos, n_neg = _both_classes(labels)
    pos, neg = scores[labels == 1], scores[labels == 0]
    r_all = _midrank(np.r_[pos, neg])
    r_pos, r_neg = _midrank(pos), _midrank(neg)
    v10 = (r_all[:n_pos] - r_pos) / n_neg
    v01 = 1.0 - (r_all[n_pos:] - r_neg) / n_pos
    return float(v10.mean()), v10, v01


def _component_cov(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # a class with a single item carries no variance estimate
    if a.size < 2:
        return np.zeros((2, 2))
    return np.cov(np.vstack([a, b]))


def delong_test(scores_a, scores_b, labels) -> DelongResult:
    """Paired two-sided DeLong test for the difference of two correlated AUCs."""
    _, v10a, v01a = delong_components(scores_a, labels)
    _, v10b, v01b = delong_components(scores_b, labels)
    # report the trapezoid estimates so they match roc_auc bit for bit
    auc_a, auc_b = auc_score(scores_a, labels), auc_score(scores_b, labels)
    m, n = v10a.size, v01a.size
    cov = _component_cov(v10a, v10b) / m + _component_cov(v01a, v01b) / n
    var = float(cov[0, 0] + cov[1, 1] - 2.0 * cov[0, 1])
    if not var > 1e-15:
        return DelongResult(auc_a, auc_b, 1.0, 0.0, max(var, 0.0), degenerate=True)
    z = (auc_a - auc_b) / np.sqrt(var)
    p = float(2.0 * stats.norm.sf(abs(z)))
    return DelongResult(auc_a, auc_b, min(p, 1.0), float(z), var)


def stratified_kfold(labels, k: int = 10, seed=0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled stratified folds; each index lands in exactly one test fold.

    Items of each class are permuted and dealt round-robin, continuing the
    deal where the previous class stopped so fold sizes stay within one.
    """
    labels = np.asarray(labels).ravel()
    classes, counts = np.unique(labels, return_counts=True)
    if k < 2:
        raise ValueError("need at least two folds")
    if k > counts.min():
        raise ValueError(f"k={k} exceeds the smallest class size {counts.min()}")
    g = as_generator(seed)
    fold_of = np.empty(labels.size, dtype=np.int64)
    start = 0
    for cls in classes:
        idx = g.permutation(np.flatnonzero(labels == cls))
        fold_of[idx] = (start + np.arange(idx.size)) % k
        start = (start + idx.size) % k
    out = []
    for f in range(k):
        test = np.flatnonzero(fold_of == f)
        train = np.flatnonzero(fold_of != f)
        out.append((train, test))
    return out


def variance_of_laplacian(seq: CineSequence | np.ndarray) -> float:
    """Mean over frames of the variance of the 3x3 Laplacian response (edge-clamped)."""
    frames = seq.frames if isinstance(seq, CineSequence) else np.asarray(seq)
    if frames.ndim == 2:
        frames = frames[None]
    if frames.size == 0:
        raise ValueError("empty sequence")
    return float(np.mean([ndimage.convolve(f.astype(np.float64), LAPLACIAN, mode="nearest").var()
                          for f in frames]))


@dataclass
class EvalReport:
    folds: list[dict]
    roc: list[list[float]]
    auc: float
    confusion: ConfusionCounts
    delong: Optional[DelongResult] = None

    def to_json(self) -> dict:
        out = {
            "schema": 1,
            "folds": self.folds,
            "roc": self.roc,
            "auc": self.auc,
            "confusion": {"TP": self.confusion.TP, "FP": self.confusion.FP,
                          "FN": self.confusion.FN, "TN": self.confusion.TN},
        }
        if self.delong is not None:
            out["delong"] = self.delong.as_dict()
        return out


def evaluate_scores(scores, labels, k: int = 10, seed=0, threshold: float = 0.5,
                    compare_scores=None, repeats: int = 1) -> EvalReport:
    """Per-fold metrics over stratified folds of a scored set, pooled ROC and
    an optional DeLong comparison against *compare_scores*.

    Folds whose test part holds a single class report ``auc`` as ``None``.
    """
    scores, labels = _check_binary(scores, labels)
    k = min(k, int(np.bincount(labels, minlength=2).min()))
    folds = []
    g = as_generator(seed)
    for _ in range(repeats):
        split_seed = int(g.integers(0, 2**63 - 1))
        for _, test in (stratified_kfold(labels, k, split_seed) if k >= 2 else [(None, np.arange(labels.size))]):
            _, m = confusion_and_metrics(scores[test], labels[test], threshold)
            row = m.as_dict()
            yt = labels[test]
            row["auc"] = auc_score(scores[test], yt) if 0 < yt.sum() < yt.size else None
            folds.append(row)
    curve, auc = roc_auc(scores, labels)
    counts = confusion_counts(scores, labels, threshold)
    dl = delong_test(scores, compare_scores, labels) if compare_scores is not None else None
    return EvalReport(folds, curve.points(), auc, counts, dl)
