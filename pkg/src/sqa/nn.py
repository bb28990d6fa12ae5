"""Minimal convolutional NN engine: forward, exact backprop, Adam, MSE.

Layers operate on batched channels-last arrays (N, H, W, C) or (N, D).
Convolutions are expressed as nine shifted matrix products so the heavy
lifting lands in BLAS; the test suite checks them against a naive nested
loop reference and central finite differences.

Weights are float32 by default; gradient-check builds pass dtype=float64.
Reductions (bias gradients, loss) accumulate in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeMismatch


def he_uniform(shape, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base class; layers cache what backward needs during forward."""

    def params(self) -> list[np.ndarray]:
        return []

    def grads(self) -> list[np.ndarray]:
        return []

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv2D(Layer):
    """3x3 same-padding stride-1 convolution, channels last.

    Two GEMM lowerings, picked by input channel count: with few input
    channels the im2col patch matrix is cheap to build, so one GEMM does
    the whole layer; otherwise nine GEMMs run directly on the contiguous
    zero-padded activation (one per kernel tap), avoiding any large
    strided copy. Both paths compute the identical map; the test suite
    checks them against a naive nested-loop reference.
    """

    _IM2COL_MAX_IN_CHANNELS = 4

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.dtype = np.dtype(dtype)
        fan_in = 9 * in_channels
        self.weights = he_uniform((3, 3, in_channels, out_channels), fan_in, rng, dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._x_pad = None

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        return [self.grad_weights, self.grad_bias]

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeMismatch(
                f"Conv2D expected (N,H,W,{self.in_channels}), got {x.shape}"
            )
        n, h, w, ci = x.shape
        x_pad = np.zeros((n, h + 2, w + 2, ci), dtype=self.dtype)
        x_pad[:, 1:-1, 1:-1, :] = np.asarray(x, dtype=self.dtype)
        if ci <= self._IM2COL_MAX_IN_CHANNELS:
            # (n, h, w, ci, 3, 3) patch view; single GEMM over (ci, di, dj)
            view = np.lib.stride_tricks.sliding_window_view(x_pad, (3, 3), axis=(1, 2))
            cols = np.ascontiguousarray(view).reshape(n * h * w, ci * 9)
            wm = np.ascontiguousarray(
                self.weights.transpose(2, 0, 1, 3)
            ).reshape(ci * 9, self.out_channels)
            out = (cols @ wm + self.bias).reshape(n, h, w, self.out_channels)
        else:
            x_flat = x_pad.reshape(-1, ci)
            out = np.empty((n, h, w, self.out_channels), dtype=self.dtype)
            out[:] = self.bias
            for di in range(3):
                for dj in range(3):
                    y = (x_flat @ self.weights[di, dj]).reshape(
                        n, h + 2, w + 2, self.out_channels
                    )
                    out += y[:, di:di + h, dj:dj + w, :]
        self._x_pad = x_pad if training else None
        return out

    def backward(self, grad_out):
        x_pad = self._x_pad
        n, hp, wp, ci = x_pad.shape
        h, w = hp - 2, wp - 2
        co = self.out_channels
        if grad_out.shape != (n, h, w, co):
            raise ShapeMismatch(
                f"Conv2D backward expected {(n, h, w, co)}, got {grad_out.shape}"
            )
        g = np.ascontiguousarray(grad_out, dtype=self.dtype)
        self.grad_bias[:] = g.sum(axis=(0, 1, 2), dtype=np.float64).astype(self.dtype)
        x_flat = x_pad.reshape(-1, ci)
        # grad wrt tap (di, dj) pairs the padded input with the output grad
        # shifted by (di, dj) inside the padded frame; grad wrt the input
        # collects the same shifted grads through the transposed weights.
        g_pad = np.zeros((n, hp, wp, co), dtype=self.dtype)
        grad_x_flat = np.zeros((n * hp * wp, ci), dtype=self.dtype)
        for di in range(3):
            for dj in range(3):
                g_pad[:] = 0
                g_pad[:, di:di + h, dj:dj + w, :] = g
                g_flat = g_pad.reshape(-1, co)
                self.grad_weights[di, dj] = x_flat.T @ g_flat
                grad_x_flat += g_flat @ self.weights[di, dj].T
        return grad_x_flat.reshape(n, hp, wp, ci)[:, 1:-1, 1:-1, :]


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 dtype=np.float32):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.dtype = np.dtype(dtype)
        self.weights = he_uniform((in_dim, out_dim), in_dim, rng, dtype)
        self.bias = np.zeros(out_dim, dtype=dtype)
        self.grad_weights = np.zeros_like(self.weights)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None

    def params(self):
        return [self.weights, self.bias]

    def grads(self):
        return [self.grad_weights, self.grad_bias]

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ShapeMismatch(f"Dense expected (N,{self.in_dim}), got {x.shape}")
        self._x = x if training else None
        return x @ self.weights + self.bias

    def backward(self, grad_out):
        if grad_out.shape != (self._x.shape[0], self.out_dim):
            raise ShapeMismatch(f"Dense backward got {grad_out.shape}")
        g = grad_out.astype(self.dtype, copy=False)
        self.grad_weights[:] = self._x.T @ g
        self.grad_bias[:] = g.sum(axis=0, dtype=np.float64).astype(self.dtype)
        return g @ self.weights.T


class ReLU(Layer):
    def __init__(self):
        self._mask = None

    def forward(self, x, training=False):
        mask = x > 0  # subgradient 0 at 0
        self._mask = mask if training else None
        return x * mask

    def backward(self, grad_out):
        return grad_out * self._mask


class MaxPool2D(Layer):
    """2x2 stride-2 max pooling; odd trailing rows/columns are dropped."""

    def __init__(self):
        self._cache = None

    def forward(self, x, training=False):
        if x.ndim != 4:
            raise ShapeMismatch(f"MaxPool2D expected 4-D input, got {x.shape}")
        n, h, w, c = x.shape
        h2, w2 = h // 2, w // 2
        if h2 == 0 or w2 == 0:
            raise ShapeMismatch(f"MaxPool2D input too small: {x.shape}")
        windows = (
            x[:, :h2 * 2, :w2 * 2, :]
            .reshape(n, h2, 2, w2, 2, c)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(n, h2, w2, 4, c)
        )
        # argmax gives the first index on ties
        idx = windows.argmax(axis=3)
        out = np.take_along_axis(windows, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
        self._cache = (x.shape, idx) if training else None
        return out

    def backward(self, grad_out):
        (n, h, w, c), idx = self._cache
        h2, w2 = h // 2, w // 2
        if grad_out.shape != (n, h2, w2, c):
            raise ShapeMismatch(f"MaxPool2D backward got {grad_out.shape}")
        grad_windows = np.zeros((n, h2, w2, 4, c), dtype=grad_out.dtype)
        np.put_along_axis(grad_windows, idx[:, :, :, None, :],
                          grad_out[:, :, :, None, :], axis=3)
        grad_x = np.zeros((n, h, w, c), dtype=grad_out.dtype)
        grad_x[:, :h2 * 2, :w2 * 2, :] = (
            grad_windows.reshape(n, h2, w2, 2, 2, c)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(n, h2 * 2, w2 * 2, c)
        )
        return grad_x


class GlobalMaxPool(Layer):
    """Reduce (N, H, W, C) -> (N, C) by max over space."""

    def __init__(self):
        self._cache = None

    def forward(self, x, training=False):
        if x.ndim != 4:
            raise ShapeMismatch(f"GlobalMaxPool expected 4-D input, got {x.shape}")
        n, h, w, c = x.shape
        flat = x.reshape(n, h * w, c)
        idx = flat.argmax(axis=1)  # first index on ties
        out = np.take_along_axis(flat, idx[:, None, :], axis=1)[:, 0, :]
        self._cache = (x.shape, idx) if training else None
        return out

    def backward(self, grad_out):
        (n, h, w, c), idx = self._cache
        if grad_out.shape != (n, c):
            raise ShapeMismatch(f"GlobalMaxPool backward got {grad_out.shape}")
        grad_flat = np.zeros((n, h * w, c), dtype=grad_out.dtype)
        np.put_along_axis(grad_flat, idx[:, None, :], grad_out[:, None, :], axis=1)
        return grad_flat.reshape(n, h, w, c)


class Dropout(Layer):
    """Inverted dropout; identity at inference."""

    def __init__(self, rate: float, rng: np.random.Generator | None = None):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self._mask = None

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        mask = (self.rng.random(x.shape) >= self.rate).astype(x.dtype) / keep
        self._mask = mask
        return x * mask

    def backward(self, grad_out):
        if self._mask is None:
            return grad_out
        return grad_out * self._mask


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error over all elements and its gradient wrt pred."""
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    diff = pred.astype(np.float64) - target.astype(np.float64)
    loss = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return loss, grad.astype(pred.dtype)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: AdamState) -> AdamState:
    """One Adam update with bias correction; params are updated in place."""
    if len(params) != len(grads):
        raise ShapeMismatch("params/grads length mismatch")
    if not state.m:
        state.m = [np.zeros_like(p, dtype=np.float64) for p in params]
        state.v = [np.zeros_like(p, dtype=np.float64) for p in params]
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"adam_step shape mismatch: {p.shape} vs {g.shape}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        g64 = g.astype(np.float64)
        m *= state.beta1
        m += (1.0 - state.beta1) * g64
        v *= state.beta2
        v += (1.0 - state.beta2) * g64 * g64
        update = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p -= update.astype(p.dtype)
    return state
