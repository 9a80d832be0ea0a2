"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..rng import as_generator
from .model import ClassifierModel, loss_and_grads


@dataclass
class GradCheckResult:
    max_relative_error: float
    n_checked: int
    n_excluded: int
    worst: Optional[tuple[str, tuple[int, ...]]] = None


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(loss_fn: Callable[[dict], float], params: dict[str, np.ndarray],
                    analytic: dict[str, np.ndarray], eps: float = 1e-3, n_coords: int = 200,
                    rng=0, pattern_fn: Optional[Callable[[dict], list]] = None) -> GradCheckResult:
    """Compare *analytic* to ``(L(w + eps) - L(w - eps)) / 2 eps`` on sampled coordinates.

    When *pattern_fn* is given it returns the piecewise-linear activation
    pattern (ReLU masks, pool winners) for a parameter set; a coordinate whose
    perturbation changes that pattern sits on a kink and is skipped.  Sampling
    continues until *n_coords* coordinates have been compared or every
    coordinate has been tried.
    """
    g = as_generator(rng)
    keys = list(params)
    sizes = np.array([params[k].size for k in keys])
    total = int(sizes.sum())
    order = g.permutation(total)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    base_pattern = pattern_fn(params) if pattern_fn else None

    worst_err, worst = 0.0, None
    checked = excluded = 0
    for flat in order:
        if checked >= n_coords:
            break
        ki = int(np.searchsorted(offsets, flat, side="right") - 1)
        key = keys[ki]
        idx = np.unravel_index(int(flat - offsets[ki]), params[key].shape)
        w = params[key]
        orig = w[idx]
        w[idx] = orig + eps
        lp = loss_fn(params)
        kink = pattern_fn is not None and not _same(pattern_fn(params), base_pattern)
        w[idx] = orig - eps
        lm = loss_fn(params)
        kink = kink or (pattern_fn is not None and not _same(pattern_fn(params), base_pattern))
        w[idx] = orig
        if kink:
            excluded += 1
            continue
        numeric = (lp - lm) / (2.0 * eps)
        err = relative_error(float(analytic[key][idx]), numeric)
        checked += 1
        if err > worst_err:
            worst_err, worst = err, (key, tuple(int(i) for i in idx))
    return GradCheckResult(worst_err, checked, excluded, worst)


def _same(a: list, b: list) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def grad_check(model: ClassifierModel, batch, eps: float = 1e-3, n_coords: int = 200,
               rng=0, class_weights=None) -> GradCheckResult:
    """Finite-difference check of a model's backward pass in float64, dropout off."""
    m = model.astype(np.float64)
    x, y = batch
    x = np.asarray(x, dtype=np.float64)
    _, analytic = loss_and_grads(m, x, y, class_weights, train_mode=False)

    def loss_fn(params):
        return loss_and_grads(m, x, y, class_weights, train_mode=False)[0]

    def pattern_fn(params):
        pats: list = []
        loss_and_grads(m, x, y, class_weights, train_mode=False, patterns=pats)
        return pats

    return check_gradients(loss_fn, m.params, analytic, eps, n_coords, rng, pattern_fn)
