"""Architectures, parameter initialisation, inference and gradients."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence

import numpy as np

from ..rng import RngStream, as_generator
from ..types import CineSequence
from .layers import LSTM, Conv, Dense, Dropout, Layer, MaxPool, ReLU, Reshape, sigmoid

EPS = 1e-7
VARIANTS = ("cnn3d", "lrcn")


@dataclass(frozen=True)
class ArchDescriptor:
    """Network description.

    ``pools`` maps a conv index to the pool window applied after that conv's
    activation.  For ``cnn3d`` windows are (t, h, w); for ``lrcn`` they are
    per-frame (h, w).
    """

    variant: str
    input_shape: tuple[int, int, int] = (50, 80, 80)
    conv_channels: tuple[int, ...] = (4, 4, 8, 8, 16, 16)
    kernel: int = 3
    pools: tuple[tuple[int, tuple[int, ...]], ...] = ()
    fc_widths: tuple[int, ...] = (32,)
    hidden: int = 32
    dropout_p: float = 0.5
    conv_dropout: bool = True

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if len(self.conv_channels) != 6:
            raise ValueError("both variants use 6 convolutional layers")
        want_pools = 4 if self.variant == "cnn3d" else 3
        if len(self.pools) != want_pools:
            raise ValueError(f"{self.variant} uses {want_pools} pooling layers, got {len(self.pools)}")
        if self.variant == "cnn3d" and len(self.fc_widths) != 1:
            raise ValueError("cnn3d has two fully-connected layers (one hidden + output)")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout probability must lie in [0, 1)")
        self.final_spatial()

    def final_spatial(self) -> tuple[int, ...]:
        spatial = tuple(self.input_shape) if self.variant == "cnn3d" else tuple(self.input_shape[1:])
        for _, size in sorted(self.pools):
            spatial = MaxPool(size).out_shape(spatial)
        return spatial

    @property
    def feature_width(self) -> int:
        return self.conv_channels[-1] * int(np.prod(self.final_spatial()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pools"] = [[i, list(s)] for i, s in self.pools]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchDescriptor":
        d = dict(d)
        d["input_shape"] = tuple(d["input_shape"])
        d["conv_channels"] = tuple(d["conv_channels"])
        d["fc_widths"] = tuple(d.get("fc_widths", (32,)))
        d["pools"] = tuple((int(i), tuple(s)) for i, s in d["pools"])
        return cls(**d)


def default_arch(variant: str, input_shape: tuple[int, int, int] = (50, 80, 80)) -> ArchDescriptor:
    """Desk-scale defaults for 50 x 80 x 80 inputs."""
    if variant == "cnn3d":
        pools = ((0, (2, 4, 4)), (1, (1, 2, 2)), (3, (5, 2, 2)), (5, (5, 5, 5)))
        return ArchDescriptor("cnn3d", input_shape, pools=pools, fc_widths=(32,))
    if variant == "lrcn":
        pools = ((0, (4, 4)), (2, (2, 2)), (4, (5, 5)))
        return ArchDescriptor("lrcn", input_shape, pools=pools, hidden=32)
    raise ValueError(f"unknown variant {variant!r}")


def tiny_arch(variant: str) -> ArchDescriptor:
    """Few-hundred-parameter instances used for gradient checking."""
    ch = (2, 2, 3, 3, 2, 2)
    if variant == "cnn3d":
        pools = ((0, (1, 2, 2)), (1, (2, 1, 1)), (3, (1, 2, 2)), (5, (2, 2, 2)))
        return ArchDescriptor("cnn3d", (4, 8, 8), ch, pools=pools, fc_widths=(4,), dropout_p=0.0)
    pools = ((0, (2, 2)), (2, (2, 2)), (4, (1, 1)))
    return ArchDescriptor("lrcn", (5, 8, 8), ch, pools=pools, hidden=4, dropout_p=0.0)


class Network:
    """Layer graph for an architecture."""

    def __init__(self, arch: ArchDescriptor):
        arch.validate()
        self.arch = arch
        pools = dict(arch.pools)
        T, H, W = arch.input_shape
        nd = 3 if arch.variant == "cnn3d" else 2
        layers: list[Layer] = []
        if arch.variant == "cnn3d":
            layers.append(Reshape(lambda s: (s[0], 1) + tuple(s[1:])))
        else:
            layers.append(Reshape(lambda s: (s[0] * s[1], 1) + tuple(s[2:])))
        cin = 1
        for i, cout in enumerate(arch.conv_channels):
            layers.append(Conv(f"conv{i}", cin, cout, arch.kernel, nd))
            # max-pool commutes with ReLU; pooling first runs ReLU on the smaller map
            if i in pools:
                layers.append(MaxPool(pools[i]))
            layers.append(ReLU())
            if arch.variant == "cnn3d" and arch.conv_dropout and arch.dropout_p > 0:
                layers.append(Dropout(arch.dropout_p))
            cin = cout
        feat = arch.feature_width
        if arch.variant == "cnn3d":
            layers.append(Reshape(lambda s: (s[0], -1)))
            layers += [Dense("fc0", feat, arch.fc_widths[0]), ReLU()]
            if arch.dropout_p > 0:
                layers.append(Dropout(arch.dropout_p))
            layers.append(Dense("out", arch.fc_widths[0], 1))
        else:
            layers.append(Reshape(lambda s, T=T: (s[0] // T, T, -1)))
            if arch.dropout_p > 0:
                layers.append(Dropout(arch.dropout_p))
            layers += [LSTM("lstm", feat, arch.hidden), Dense("out", arch.hidden, 1)]
        self.layers = layers
        self.first_param_layer = next(i for i, l in enumerate(layers) if l.param_shapes)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes: dict[str, tuple[int, ...]] = {}
        for layer in self.layers:
            shapes.update(layer.param_shapes)
        return shapes

    def fan_ins(self) -> dict[str, int]:
        out = {}
        for layer in self.layers:
            for key in layer.param_shapes:
                out[key] = layer.fan_in_of(key) if isinstance(layer, LSTM) else layer.fan_in
        return out

    def logits(self, params, x, train, rng, keep_caches=False):
        caches = []
        h = x
        for layer in self.layers:
            h, cache = layer.forward(params, h, train, rng)
            if keep_caches:
                caches.append(cache)
        return h[:, 0], caches

    def backward(self, params, caches, dlogit, grads):
        dy = dlogit[:, None]
        for k in range(len(self.layers) - 1, -1, -1):
            if k < self.first_param_layer:
                break
            dy = self.layers[k].backward(params, caches[k], dy, grads, need_dx=k > self.first_param_layer)

    def patterns(self, caches) -> list[np.ndarray]:
        pats = []
        for layer, cache in zip(self.layers, caches):
            p = layer.pattern(cache)
            if isinstance(p, list):
                pats.extend(p)
            elif p is not None:
                pats.append(p)
        return pats


_NETWORKS: dict[ArchDescriptor, Network] = {}


def network_for(arch: ArchDescriptor) -> Network:
    net = _NETWORKS.get(arch)
    if net is None:
        net = _NETWORKS[arch] = Network(arch)
    return net


@dataclass
class ClassifierModel:
    arch: ArchDescriptor
    params: dict[str, np.ndarray]
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    seed: int = 0
    epoch: int = 0

    def __post_init__(self) -> None:
        shapes = network_for(self.arch).param_shapes()
        if list(shapes) != list(self.params):
            raise ValueError("parameter names do not match the architecture")
        for k, s in shapes.items():
            if self.params[k].shape != s:
                raise ValueError(f"{k}: shape {self.params[k].shape} != {s}")
        if not self.velocity:
            self.velocity = {k: np.zeros_like(v) for k, v in self.params.items()}

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    @property
    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "ClassifierModel":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "ClassifierModel":
        return ClassifierModel(self.arch, {k: v.astype(dtype) for k, v in self.params.items()},
                               {k: v.astype(dtype) for k, v in self.velocity.items()},
                               self.seed, self.epoch)


def init_model(arch: ArchDescriptor, init_mode: str = "scaled", seed: int = 0,
               dtype=np.float32) -> ClassifierModel:
    """Gaussian weights, zero biases, zero momentum.

    ``paper_gaussian`` draws every weight from N(0, 1); ``scaled`` uses
    N(0, 2 / fan_in).
    """
    if init_mode not in ("paper_gaussian", "scaled"):
        raise ValueError(f"unknown init mode {init_mode!r}")
    net = network_for(arch)
    fan = net.fan_ins()
    g = RngStream(seed).child("init").generator()
    params = {}
    for key, shape in net.param_shapes().items():
        if key.endswith(".b"):
            params[key] = np.zeros(shape, dtype=dtype)
            continue
        std = 1.0 if init_mode == "paper_gaussian" else np.sqrt(2.0 / fan[key])
        params[key] = (g.standard_normal(shape) * std).astype(dtype)
    return ClassifierModel(arch, params, seed=seed)


def _as_batch(model: ClassifierModel, x) -> np.ndarray:
    if isinstance(x, CineSequence):
        x = x.frames[None]
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    if tuple(x.shape[1:]) != tuple(model.arch.input_shape):
        raise ValueError(f"input shape {x.shape[1:]} does not match architecture {model.arch.input_shape}")
    return x.astype(model.dtype, copy=False)


def forward(model: ClassifierModel, seq, train_mode: bool = False, rng=None,
            chunk: int = 8) -> np.ndarray | float:
    """Artefact probability for one sequence (float) or a batch (array)."""
    single = isinstance(seq, CineSequence) or np.asarray(seq).ndim == 3
    x = _as_batch(model, seq)
    g = as_generator(rng) if train_mode else None
    net = network_for(model.arch)
    out = []
    for s in range(0, x.shape[0], chunk):
        z, _ = net.logits(model.params, x[s:s + chunk], train_mode, g)
        out.append(sigmoid(z.astype(np.float64)))
    p = np.concatenate(out)
    return float(p[0]) if single else p


def predict_proba(model: ClassifierModel, x, chunk: int = 8) -> np.ndarray:
    return np.atleast_1d(forward(model, np.asarray(x) if not isinstance(x, CineSequence) else x,
                                 train_mode=False, chunk=chunk))


def _weights(class_weights) -> tuple[float, float]:
    if class_weights is None:
        return 1.0, 1.0
    w_pos, w_neg = class_weights
    return float(w_pos), float(w_neg)


def loss(y_hat, y, class_weights=None) -> float:
    """Mean (optionally class-weighted) binary cross-entropy, clamped at 1e-7."""
    y_hat = np.asarray(y_hat, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if y_hat.size == 0:
        raise ValueError("loss of an empty batch")
    if y_hat.shape != y.shape:
        raise ValueError("prediction and label counts differ")
    w_pos, w_neg = _weights(class_weights)
    p = np.clip(y_hat, EPS, 1.0 - EPS)
    return float(-np.mean(w_pos * y * np.log(p) + w_neg * (1.0 - y) * np.log(1.0 - p)))


def class_weights_from_counts(n_pos: int, n_neg: int) -> tuple[float, float]:
    """(w_pos, w_neg) inversely proportional to class frequency, w_neg = 1."""
    return n_neg / n_pos, 1.0


def _dloss_dlogit(p: np.ndarray, y: np.ndarray, n_total: int, class_weights) -> np.ndarray:
    w_pos, w_neg = _weights(class_weights)
    active = (p >= EPS) & (p <= 1.0 - EPS)
    # d/dz of -(w+ y log p + w- (1-y) log(1-p)) with p = sigmoid(z)
    d = w_pos * y * (p - 1.0) + w_neg * (1.0 - y) * p
    return np.where(active, d, 0.0) / n_total


def loss_and_grads(model: ClassifierModel, x, y, class_weights=None, rng=None,
                   train_mode: bool = True, chunk: int = 8,
                   patterns: Optional[list] = None) -> tuple[float, dict[str, np.ndarray]]:
    """Mean batch loss and its exact gradient, processed in micro-batches.

    Dropout masks are drawn from *rng* in micro-batch order and reused by the
    matching backward pass.
    """
    x = _as_batch(model, x)
    y = np.asarray(y, dtype=np.float64).ravel()
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if y.size != n:
        raise ValueError("label count does not match batch size")
    g = as_generator(rng) if (train_mode and rng is not None) else None
    if train_mode and g is None and model.arch.dropout_p > 0:
        raise ValueError("training-mode gradients with dropout need an rng")
    net = network_for(model.arch)
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    total = 0.0
    for s in range(0, n, chunk):
        xb, yb = x[s:s + chunk], y[s:s + chunk]
        z, caches = net.logits(model.params, xb, train_mode, g, keep_caches=True)
        p = sigmoid(z.astype(np.float64))
        pc = np.clip(p, EPS, 1.0 - EPS)
        w_pos, w_neg = _weights(class_weights)
        total += float(-np.sum(w_pos * yb * np.log(pc) + w_neg * (1.0 - yb) * np.log(1.0 - pc)))
        dz = _dloss_dlogit(p, yb, n, class_weights).astype(model.dtype)
        if patterns is not None:
            patterns.extend(net.patterns(caches))
        net.backward(model.params, caches, dz, grads)
    return total / n, grads


def backward(model: ClassifierModel, batch, class_weights=None, rng=None, train_mode: bool = True,
             chunk: int = 8) -> dict[str, np.ndarray]:
    """Gradients of the mean batch loss; *batch* is ``(x, y)``."""
    x, y = batch
    return loss_and_grads(model, x, y, class_weights, rng, train_mode, chunk)[1]


def batch_loss(model: ClassifierModel, x, y, class_weights=None, chunk: int = 8) -> float:
    return loss(predict_proba(model, x, chunk), y, class_weights)


def sgd_step(model: ClassifierModel, grads: dict[str, np.ndarray], lr: float, momentum: float) -> ClassifierModel:
    """Heavy-ball update in place: ``v = momentum * v + g``; ``W -= lr * v``."""
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for {k}")
    for k, g in grads.items():
        v = model.velocity[k]
        v *= momentum
        v += g
        model.params[k] -= lr * v
    return model
