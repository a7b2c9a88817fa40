"""Convolutional building blocks on top of `auxseg.tensor`.

Conventions: NCHW layout, cross-correlation (no kernel flip). Convolution
weights are ``[out, in, k, k]``; transposed convolution weights are
``[in, out, k, k]`` so one weight array serves a conv and its adjoint.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import Rng
from .tensor import ShapeError, Tensor, _record_kink


def _uniform_init(rng: Rng, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    n = int(np.prod(shape))
    return ((2.0 * rng.uniform_array(n) - 1.0) * bound).reshape(shape)


@dataclass
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    weight: Tensor | None = None
    bias: Tensor | None = None

    def init(self, rng: Rng) -> "ConvSpec":
        """Fan-in uniform weights, bound sqrt(6 / (in * k * k)); zero bias."""
        k = self.kernel
        shape = (self.out_channels, self.in_channels, k, k)
        self.weight = Tensor(_uniform_init(rng, shape, self.in_channels * k * k), requires_grad=True)
        self.bias = Tensor(np.zeros(self.out_channels), requires_grad=True)
        return self

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def param_count(self) -> int:
        return self.out_channels * self.in_channels * self.kernel**2 + self.out_channels

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


@dataclass
class TransposedConvSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int
    weight: Tensor | None = None
    bias: Tensor | None = None

    def init(self, rng: Rng) -> "TransposedConvSpec":
        # each output pixel sums in_channels * ceil(k/s)^2 terms
        k, s = self.kernel, self.stride
        shape = (self.in_channels, self.out_channels, k, k)
        fan_in = self.in_channels * (-(-k // s)) ** 2
        self.weight = Tensor(_uniform_init(rng, shape, fan_in), requires_grad=True)
        self.bias = Tensor(np.zeros(self.out_channels), requires_grad=True)
        return self

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        return (h - 1) * self.stride + self.kernel, (w - 1) * self.stride + self.kernel

    def param_count(self) -> int:
        return self.in_channels * self.out_channels * self.kernel**2 + self.out_channels

    def params(self) -> list[Tensor]:
        return [self.weight, self.bias]


def _check_nchw(x: Tensor, channels: int, what: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{what}: expected NCHW input, got shape {x.shape}")
    if x.shape[1] != channels:
        raise ShapeError(f"{what}: expected {channels} input channels, got {x.shape[1]}")


def conv2d(x: Tensor, spec: ConvSpec) -> Tensor:
    _check_nchw(x, spec.in_channels, "conv2d")
    k, s, p = spec.kernel, spec.stride, spec.padding
    n, c, h, w = x.shape
    ho, wo = spec.output_size(h, w)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {k} does not fit input {h}x{w} with padding {p}")
    wt, b = spec.weight, spec.bias
    o = spec.out_channels
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    # im2col as (N, C, ki, kj, Ho, Wo); reused for the weight gradient
    cols = np.empty((n, c, k, k, ho, wo))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + s * ho:s, j:j + s * wo:s]
    cols = cols.reshape(n, c * k * k, ho * wo)
    w2 = wt.data.reshape(o, c * k * k)
    out = np.matmul(w2, cols).reshape(n, o, ho, wo)
    out += b.data[None, :, None, None]

    def backward(g):
        g2 = g.reshape(n, o, ho * wo)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wt.shape)
        gb = g2.sum(axis=(0, 2))
        gx = None
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2).reshape(n, c, k, k, ho, wo)
            gxp = np.zeros((n, c, h + 2 * p, w + 2 * p))
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += gcols[:, :, i, j]
            gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return gx, gw, gb

    return Tensor._make(out, (x, wt, b), "conv2d", backward)


def transposed_conv2d(x: Tensor, spec: TransposedConvSpec) -> Tensor:
    """Upsampling by the adjoint of a stride-s, unpadded convolution."""
    _check_nchw(x, spec.in_channels, "transposed_conv2d")
    k, s = spec.kernel, spec.stride
    n, c, h, w = x.shape
    o = spec.out_channels
    ho, wo = spec.output_size(h, w)
    wt, b = spec.weight, spec.bias
    w2 = wt.data.reshape(c, o * k * k)
    x2 = x.data.reshape(n, c, h * w)
    contrib = np.matmul(w2.T, x2).reshape(n, o, k, k, h, w)
    out = np.zeros((n, o, ho, wo))
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + s * h:s, j:j + s * w:s] += contrib[:, :, i, j]
    out += b.data[None, :, None, None]

    def backward(g):
        gcols = np.empty((n, o, k, k, h, w))
        for i in range(k):
            for j in range(k):
                gcols[:, :, i, j] = g[:, :, i:i + s * h:s, j:j + s * w:s]
        gcols = gcols.reshape(n, o * k * k, h * w)
        gw = np.matmul(x2, gcols.transpose(0, 2, 1)).sum(axis=0).reshape(wt.shape)
        gb = g.sum(axis=(0, 2, 3))
        gx = np.matmul(w2, gcols).reshape(n, c, h, w) if x.requires_grad else None
        return gx, gw, gb

    return Tensor._make(out, (x, wt, b), "transposed_conv2d", backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pool, stride 2. Ties go to the first window entry in row-major order."""
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2: expected NCHW input, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2: spatial extents must be even, got {h}x{w}")
    d = x.data
    corners = ((0, 0), (0, 1), (1, 0), (1, 1))
    quads = [d[:, :, i::2, j::2] for i, j in corners]
    out = np.maximum(np.maximum(quads[0], quads[1]), np.maximum(quads[2], quads[3]))
    masks = []
    taken = np.zeros(out.shape, dtype=bool)
    for q in quads[:3]:
        m = (q == out) & ~taken
        taken |= m
        masks.append(m)
    masks.append(~taken)
    for m in masks:
        _record_kink(m)

    def backward(g):
        gx = np.zeros((n, c, h, w))
        for (i, j), m in zip(corners, masks):
            gx[:, :, i::2, j::2] = g * m
        return (gx,)

    return Tensor._make(out, (x,), "maxpool2", backward)


def softmax_channels(x: Tensor) -> Tensor:
    if x.data.ndim != 4 or x.shape[1] < 2:
        raise ShapeError(f"softmax_channels: need NCHW with C >= 2, got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise FloatingPointError("softmax_channels: non-finite logits")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return Tensor._make(p, (x,), "softmax_channels", backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 4 or b.data.ndim != 4:
        raise ShapeError("concat_channels: inputs must be NCHW")
    na, ca, ha, wa = a.shape
    nb, cb, hb, wb = b.shape
    if (na, ha, wa) != (nb, hb, wb):
        raise ShapeError(f"concat_channels: N/H/W mismatch {a.shape} vs {b.shape}")
    out = np.concatenate([a.data, b.data], axis=1)
    return Tensor._make(out, (a, b), "concat_channels", lambda g: (g[:, :ca], g[:, ca:]))


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    c = x.shape[1]
    if not 0 <= start < stop <= c:
        raise ShapeError(f"slice_channels: bad range [{start}, {stop}) for {c} channels")

    def backward(g):
        gx = np.zeros(x.shape)
        gx[:, start:stop] = g
        return (gx,)

    return Tensor._make(x.data[:, start:stop].copy(), (x,), "slice_channels", backward)
