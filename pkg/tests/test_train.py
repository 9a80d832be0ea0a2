import dataclasses

import numpy as np
import pytest

from cmr_forge.classifier.model import init_model
from cmr_forge.classifier.train import (TrainConfig, _Tracker, clip_gradients, fit, train, training_loss,
                                        validation_scores)
from toydata import toy_arch, toy_set

CFG = TrainConfig(lr=0.01, batch_size=16, grad_clip=1.0, max_epochs=5)


@pytest.fixture(scope="module")
def data():
    return toy_set(), toy_set(10, 1, 5000)


@pytest.mark.parametrize("seed", range(5))
def test_loss_strictly_decreases(data, seed):
    train_set, val_set = data
    cfg = dataclasses.replace(CFG, seed=seed)
    _, h = fit(init_model(toy_arch("lrcn"), seed=seed), train_set, val_set, cfg)
    assert len(h.train_loss) == 5
    assert all(b < a for a, b in zip(h.train_loss, h.train_loss[1:]))


def test_frozen_metric_triggers_patience(data):
    (x, y), _ = data
    val = (np.repeat(x[:1], 3, axis=0), np.zeros(3))
    cfg = dataclasses.replace(CFG, patience_epochs=3, max_epochs=40)
    _, h = fit(init_model(toy_arch("lrcn"), seed=0), (x, y), val, cfg)
    assert h.stopped_early
    assert len(h.val_metric) <= h.best_epoch + cfg.patience_epochs + 1


def test_same_seed_identical_history(data):
    train_set, val_set = data
    cfg = dataclasses.replace(CFG, max_epochs=3, augment=True)
    arch = toy_arch("lrcn", dropout_p=0.5)
    runs = [fit(init_model(arch, seed=1), train_set, val_set, cfg) for _ in range(2)]
    assert runs[0][1] == runs[1][1]
    assert all(np.array_equal(runs[0][0].params[k], runs[1][0].params[k]) for k in runs[0][0].params)


def test_returns_best_validation_epoch(data):
    train_set, val_set = data
    cfg = dataclasses.replace(CFG, max_epochs=6)
    best, h = train(init_model(toy_arch("cnn3d"), seed=2), train_set, val_set, cfg)
    metric, vloss, _ = validation_scores(best, *val_set)
    assert metric == pytest.approx(h.best_metric)
    assert h.best_metric == max(h.val_metric)
    assert vloss == pytest.approx(h.val_loss[h.best_epoch])


def test_train_leaves_argument_untouched(data):
    train_set, val_set = data
    m = init_model(toy_arch("lrcn"), seed=0)
    before = m.copy()
    train(m, train_set, val_set, dataclasses.replace(CFG, max_epochs=1))
    assert all(np.array_equal(m.params[k], before.params[k]) for k in m.params)


def test_empty_sets_raise(data):
    (x, y), val = data
    m = init_model(toy_arch("lrcn"))
    with pytest.raises(ValueError):
        fit(m, (x[:0], y[:0]), val, CFG)
    with pytest.raises(ValueError):
        fit(m, (x, y), (x[:0], y[:0]), CFG)


def test_tracker_relative_improvement():
    m = init_model(toy_arch("lrcn"))
    t = _Tracker(0.005)
    assert t.update(m, 0.80, 0.5, 0, tag="a")
    # a new best below the 0.5% threshold does not reset patience
    assert not t.update(m, 0.8039, 0.6, 1, tag="b")
    assert t.last_improvement == 0 and t.best_tag == "b"
    # an equal metric with lower loss replaces the snapshot
    assert not t.update(m, 0.8039, 0.4, 2, tag="c")
    assert t.best_tag == "c" and t.best_loss == 0.4
    assert t.update(m, 0.81, 0.5, 3) and t.last_improvement == 3


def test_clip_gradients():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = clip_gradients(g, 1.0)
    assert norm == pytest.approx(5.0)
    assert np.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0)
    g = {"a": np.array([0.3])}
    clip_gradients(g, 1.0)
    assert g["a"][0] == 0.3


@pytest.mark.parametrize("bad", [dict(lr=0), dict(momentum=1.0), dict(batch_size=0), dict(grad_clip=0.0)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_config_roundtrip():
    cfg = TrainConfig(class_weights=(22.4, 1.0), grad_clip=2.0)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"learning_rate": 1})


def test_training_loss_matches_loss(data):
    (x, y), _ = data
    m = init_model(toy_arch("lrcn"), seed=0)
    assert 0.6 < training_loss(m, (x, y)) < 0.8
