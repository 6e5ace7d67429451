"""Minimal numpy neural-network layers with hand-written reverse-mode
gradients. Only what the score network needs: 3x3/1x1 convolutions, dense
layers, SiLU, per-sample feature modulation, and 2x pooling/upsampling.

Every layer caches its forward inputs and consumes them in ``backward``,
which accumulates parameter gradients and returns the input gradient.
Gradient correctness is enforced by central finite differences in the
test suite.
"""

from __future__ import annotations

import numpy as np


class Param:
    """A trainable tensor with its gradient accumulator."""

    __slots__ = ("value", "grad")

    def __init__(self, value):
        self.value = np.asarray(value)
        self.grad = np.zeros_like(self.value)


def _uniform(rng, scale, shape, dtype):
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


class Conv2d:
    """Same-padded 2D convolution (odd kernel size, stride 1)."""

    def __init__(self, cin, cout, ksize=3, rng=None, dtype=np.float32, zero_init=False):
        self.cin, self.cout, self.ksize = cin, cout, ksize
        scale = 1.0 / np.sqrt(cin * ksize * ksize)
        if zero_init:
            self.w = Param(np.zeros((cout, cin, ksize, ksize), dtype=dtype))
            self.b = Param(np.zeros(cout, dtype=dtype))
        else:
            self.w = Param(_uniform(rng, scale, (cout, cin, ksize, ksize), dtype))
            self.b = Param(_uniform(rng, scale, (cout,), dtype))
        self._cache = None

    def named_params(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}

    def _im2col(self, x):
        b, c, h, w = x.shape
        k = self.ksize
        p = k // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        cols = np.empty((b, c, k, k, h, w), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols[:, :, i, j] = xp[:, :, i : i + h, j : j + w]
        return cols.reshape(b, c * k * k, h * w)

    def forward(self, x):
        b, _, h, w = x.shape
        cols = self._im2col(x)
        wm = self.w.value.reshape(self.cout, -1)
        y = np.einsum("oc,bcn->bon", wm, cols, optimize=True)
        y += self.b.value[None, :, None]
        self._cache = (cols, x.shape)
        return y.reshape(b, self.cout, h, w)

    def backward(self, dy):
        cols, xshape = self._cache
        b, c, h, w = xshape
        k = self.ksize
        p = k // 2
        dyf = dy.reshape(b, self.cout, h * w)
        self.w.grad += np.einsum("bon,bcn->oc", dyf, cols, optimize=True).reshape(self.w.value.shape)
        self.b.grad += dyf.sum(axis=(0, 2))
        wm = self.w.value.reshape(self.cout, -1)
        dcols = np.einsum("oc,bon->bcn", wm, dyf, optimize=True).reshape(b, c, k, k, h, w)
        dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + h, j : j + w] += dcols[:, :, i, j]
        return dxp[:, :, p : p + h, p : p + w] if p else dxp


class Dense:
    def __init__(self, cin, cout, rng=None, dtype=np.float32, zero_init=False):
        scale = 1.0 / np.sqrt(cin)
        if zero_init:
            self.w = Param(np.zeros((cin, cout), dtype=dtype))
            self.b = Param(np.zeros(cout, dtype=dtype))
        else:
            self.w = Param(_uniform(rng, scale, (cin, cout), dtype))
            self.b = Param(_uniform(rng, scale, (cout,), dtype))
        self._x = None

    def named_params(self, prefix):
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}

    def forward(self, x):
        self._x = x
        return x @ self.w.value + self.b.value

    def backward(self, dy):
        self.w.grad += self._x.T @ dy
        self.b.grad += dy.sum(axis=0)
        return dy @ self.w.value.T


class SiLU:
    def __init__(self):
        self._cache = None

    def forward(self, x):
        # exp overflow for very negative x still yields the correct 0 limit
        with np.errstate(over="ignore"):
            sig = 1.0 / (1.0 + np.exp(-x))
        self._cache = (x, sig)
        return x * sig

    def backward(self, dy):
        x, sig = self._cache
        return dy * (sig * (1.0 + x * (1.0 - sig)))


class FiLM:
    """Per-sample, per-channel (1 + scale) * x + shift modulation."""

    def __init__(self):
        self._cache = None

    def forward(self, x, scale, shift):
        self._cache = (x, scale)
        return x * (1.0 + scale[:, :, None, None]) + shift[:, :, None, None]

    def backward(self, dy):
        x, scale = self._cache
        dx = dy * (1.0 + scale[:, :, None, None])
        dscale = (dy * x).sum(axis=(2, 3))
        dshift = dy.sum(axis=(2, 3))
        return dx, dscale, dshift


def avgpool2(x):
    b, c, h, w = x.shape
    return x.reshape(b, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))


def avgpool2_backward(dy):
    b, c, h, w = dy.shape
    dx = np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3)
    return (dx / 4.0).astype(dy.dtype)


def upnearest2(x):
    return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


def upnearest2_backward(dy):
    b, c, h, w = dy.shape
    return dy.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def sinusoidal_embedding(log_sigma, dim, dtype):
    """Sin/cos features of log sigma over geometrically spaced frequencies."""
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, np.log(100.0), half)).astype(dtype)
    ang = np.asarray(log_sigma, dtype=dtype)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class Adam:
    """Adam over a dict of Params; an optional mask restricts updates."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.t = 0

    def step(self, allowed=None):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            if allowed is not None and name not in allowed:
                continue
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * g * g
            mhat = self.m[name] / b1t
            vhat = self.v[name] / b2t
            p.value -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.value.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad[...] = 0.0
