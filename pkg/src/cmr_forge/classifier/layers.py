"""Numpy layers with explicit forward and backward passes.

Layers are stateless: parameters live in a dict owned by the model and each
layer knows the keys it reads.  ``forward`` returns ``(output, cache)`` and
``backward`` consumes the cache, adds parameter gradients into ``grads`` and
returns the gradient with respect to the layer input (or ``None`` when the
layer is first in the network and the input gradient is not needed).
"""

from __future__ import annotations

import itertools
from typing import Optional

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Layer:
    param_shapes: dict[str, tuple[int, ...]] = {}
    fan_in: int = 0

    def forward(self, params, x, train, rng):
        raise NotImplementedError

    def backward(self, params, cache, dy, grads, need_dx=True):
        raise NotImplementedError

    # activation pattern for kink detection in gradient checks
    def pattern(self, cache) -> Optional[np.ndarray]:
        return None


class Conv(Layer):
    """Stride-1 'same' convolution over ``nd`` spatial axes, channels first."""

    def __init__(self, name: str, cin: int, cout: int, kernel: int, nd: int):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd for 'same' padding")
        self.name, self.cin, self.cout, self.k, self.nd = name, cin, cout, kernel, nd
        self.kvol = kernel ** nd
        self.fan_in = cin * self.kvol
        self.param_shapes = {f"{name}.W": (cout, cin) + (kernel,) * nd, f"{name}.b": (cout,)}
        self._offsets = list(itertools.product(range(kernel), repeat=nd))

    def _cols(self, x: np.ndarray) -> np.ndarray:
        # (N, C, *S) -> (N, C*K, prod(S))
        n, c = x.shape[:2]
        spatial = x.shape[2:]
        p = self.k // 2
        xp = np.pad(x, [(0, 0), (0, 0)] + [(p, p)] * self.nd)
        cols = np.empty((n, c, self.kvol) + spatial, dtype=x.dtype)
        for j, off in enumerate(self._offsets):
            sl = tuple(slice(o, o + s) for o, s in zip(off, spatial))
            cols[:, :, j] = xp[(slice(None), slice(None)) + sl]
        return cols.reshape(n, c * self.kvol, -1)

    def forward(self, params, x, train, rng):
        W = params[f"{self.name}.W"].reshape(self.cout, -1)
        b = params[f"{self.name}.b"]
        cols = self._cols(x)
        y = np.matmul(W, cols) + b[None, :, None]
        return y.reshape((x.shape[0], self.cout) + x.shape[2:]), (cols, x.shape)

    def backward(self, params, cache, dy, grads, need_dx=True):
        cols, shape = cache
        n = shape[0]
        spatial = shape[2:]
        dy2 = dy.reshape(n, self.cout, -1)
        gW = np.matmul(dy2, cols.transpose(0, 2, 1)).sum(axis=0)
        grads[f"{self.name}.W"] += gW.reshape(self.param_shapes[f"{self.name}.W"])
        grads[f"{self.name}.b"] += dy2.sum(axis=(0, 2))
        if not need_dx:
            return None
        W = params[f"{self.name}.W"].reshape(self.cout, -1)
        dcols = np.matmul(W.T, dy2).reshape((n, self.cin, self.kvol) + spatial)
        p = self.k // 2
        dxp = np.zeros((n, self.cin) + tuple(s + 2 * p for s in spatial), dtype=dy.dtype)
        for j, off in enumerate(self._offsets):
            sl = tuple(slice(o, o + s) for o, s in zip(off, spatial))
            dxp[(slice(None), slice(None)) + sl] += dcols[:, :, j]
        inner = tuple(slice(p, p + s) for s in spatial)
        return dxp[(slice(None), slice(None)) + inner]


class ReLU(Layer):
    def forward(self, params, x, train, rng):
        mask = x > 0
        return x * mask, mask

    def backward(self, params, cache, dy, grads, need_dx=True):
        return dy * cache

    def pattern(self, cache):
        return cache


class MaxPool(Layer):
    """Non-overlapping max pooling; every pooled axis must divide evenly.

    Gradients go to the window maximum.  Tied maxima (rare outside
    edge-clamped or constant regions) send the gradient to the first tied
    element in row-major window order.
    """

    def __init__(self, size: tuple[int, ...]):
        self.size = tuple(int(s) for s in size)
        self._offsets = list(itertools.product(*(range(p) for p in self.size)))

    def out_shape(self, spatial: tuple[int, ...]) -> tuple[int, ...]:
        if len(spatial) != len(self.size) or any(s % p for s, p in zip(spatial, self.size)):
            raise ValueError(f"pool {self.size} does not tile spatial shape {spatial}")
        return tuple(s // p for s, p in zip(spatial, self.size))

    def _view(self, a, off):
        return a[(slice(None), slice(None)) + tuple(slice(o, None, p) for o, p in zip(off, self.size))]

    def _windows(self, x, y):
        # zero-copy (n, c, o1, p1, o2, p2, ...) view of x and a broadcastable y
        win_shape = x.shape[:2]
        ybc = y.shape[:2]
        for o, p in zip(y.shape[2:], self.size):
            win_shape += (o, p)
            ybc += (o, 1)
        return x.reshape(win_shape), y.reshape(ybc)

    def forward(self, params, x, train, rng):
        self.out_shape(x.shape[2:])
        y = self._view(x, self._offsets[0]).copy()
        for off in self._offsets[1:]:
            np.maximum(y, self._view(x, off), out=y)
        return y, (x, y)

    def _mask(self, x, y):
        xr, yb = self._windows(x, y)
        mask = xr == yb
        if np.count_nonzero(mask) != y.size:
            mask = np.zeros(x.shape, dtype=bool)
            taken = np.zeros(y.shape, dtype=bool)
            for off in self._offsets:
                m = (self._view(x, off) == y) & ~taken
                self._view(mask, off)[...] = m
                taken |= m
            mask = self._windows(mask, y)[0]
        return mask

    def backward(self, params, cache, dy, grads, need_dx=True):
        x, y = cache
        mask = self._mask(x, y)
        dyb = self._windows(x, dy)[1]
        return np.where(mask, dyb, np.zeros((), dtype=dy.dtype)).reshape(x.shape)

    def pattern(self, cache):
        return self._mask(*cache)


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    def __init__(self, p: float):
        self.p = float(p)

    def forward(self, params, x, train, rng):
        if not train or self.p <= 0:
            return x, None
        keep = (rng.random(x.shape) >= self.p).astype(x.dtype) / (1.0 - self.p)
        return x * keep, keep

    def backward(self, params, cache, dy, grads, need_dx=True):
        return dy if cache is None else dy * cache


class Reshape(Layer):
    def __init__(self, shape_fn):
        self.shape_fn = shape_fn

    def forward(self, params, x, train, rng):
        return x.reshape(self.shape_fn(x.shape)), x.shape

    def backward(self, params, cache, dy, grads, need_dx=True):
        return dy.reshape(cache)


class Dense(Layer):
    def __init__(self, name: str, din: int, dout: int):
        self.name, self.din, self.dout = name, din, dout
        self.fan_in = din
        self.param_shapes = {f"{name}.W": (din, dout), f"{name}.b": (dout,)}

    def forward(self, params, x, train, rng):
        return x @ params[f"{self.name}.W"] + params[f"{self.name}.b"], x

    def backward(self, params, cache, dy, grads, need_dx=True):
        x = cache
        grads[f"{self.name}.W"] += x.T @ dy
        grads[f"{self.name}.b"] += dy.sum(axis=0)
        return dy @ params[f"{self.name}.W"].T if need_dx else None


class LSTM(Layer):
    """Single-layer LSTM over (N, T, D) returning the final hidden state (N, H).

    Gate order in the stacked weights is input, forget, cell, output.
    """

    def __init__(self, name: str, din: int, hidden: int):
        self.name, self.din, self.h = name, din, hidden
        self.fan_in = din
        self.param_shapes = {
            f"{name}.Wx": (din, 4 * hidden),
            f"{name}.Wh": (hidden, 4 * hidden),
            f"{name}.b": (4 * hidden,),
        }

    def fan_in_of(self, key: str) -> int:
        return self.h if key.endswith(".Wh") else self.din

    def forward(self, params, x, train, rng):
        Wx, Wh, b = (params[f"{self.name}.{k}"] for k in ("Wx", "Wh", "b"))
        n, T, _ = x.shape
        H = self.h
        xz = x @ Wx + b
        h = np.zeros((n, H), dtype=x.dtype)
        c = np.zeros((n, H), dtype=x.dtype)
        steps = []
        for t in range(T):
            z = xz[:, t] + h @ Wh
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            g = np.tanh(z[:, 2 * H:3 * H])
            o = sigmoid(z[:, 3 * H:])
            c_prev, h_prev = c, h
            c = f * c_prev + i * g
            tc = np.tanh(c)
            h = o * tc
            steps.append((i, f, g, o, c_prev, h_prev, tc))
        return h, (x, steps)

    def backward(self, params, cache, dy, grads, need_dx=True):
        x, steps = cache
        Wx, Wh = params[f"{self.name}.Wx"], params[f"{self.name}.Wh"]
        n, T, _ = x.shape
        dz_all = np.empty((n, T, 4 * self.h), dtype=dy.dtype)
        dh = dy
        dc = np.zeros_like(dy)
        for t in range(T - 1, -1, -1):
            i, f, g, o, c_prev, h_prev, tc = steps[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc * tc)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1)
            dz_all[:, t] = dz
            grads[f"{self.name}.Wh"] += h_prev.T @ dz
            dh = dz @ Wh.T
            dc = dc * f
        flat = dz_all.reshape(n * T, -1)
        grads[f"{self.name}.Wx"] += x.reshape(n * T, -1).T @ flat
        grads[f"{self.name}.b"] += flat.sum(axis=0)
        return (flat @ Wx.T).reshape(x.shape) if need_dx else None
