"""Dense feature-map numerics on (channels, height, width) float64 arrays.

Every function here is pure: inputs are never modified and results are
fresh arrays.  Feature maps are plain ``numpy.ndarray`` objects of rank 3;
convolution kernels are rank 4 ``(out, in, kh, kw)``.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when array shapes do not satisfy an operation's contract."""


def as_tensor(x, name="input"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3:
        raise ShapeError(f"{name} must be (C, H, W), got shape {arr.shape}")
    if arr.size == 0:
        raise ShapeError(f"{name} is empty: shape {arr.shape}")
    return arr


def check_finite(x, where):
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values produced by {where}")
    return x


@dataclass(frozen=True)
class ConvSpec:
    """Weights and geometry of one 2-D convolution layer."""

    weight: np.ndarray  # (out, in, kh, kw); (in, out, kh, kw) when transposed
    bias: np.ndarray  # (out,)
    stride: int = 1
    padding: int = 0
    transposed: bool = False

    def __post_init__(self):
        w = np.asarray(self.weight, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 4:
            raise ShapeError(f"conv weight must be 4-D, got {w.shape}")
        n_out = w.shape[1] if self.transposed else w.shape[0]
        if b.shape != (n_out,):
            raise ShapeError(f"bias shape {b.shape} does not match {n_out} output channels")
        if self.stride < 1 or self.padding < 0:
            raise ValueError("stride must be >= 1 and padding >= 0")
        object.__setattr__(self, "weight", w)
        object.__setattr__(self, "bias", b)

    @property
    def in_channels(self):
        return self.weight.shape[0 if self.transposed else 1]

    @property
    def out_channels(self):
        return self.weight.shape[1 if self.transposed else 0]

    @property
    def kernel_size(self):
        return self.weight.shape[2:]


def make_rng(seed, name):
    """Independent Philox stream for the named parameter under ``seed``.

    Streams are keyed by (seed, crc32(name)) so adding a new layer never
    shifts the draws of existing ones.
    """
    ss = np.random.SeedSequence([int(seed), zlib.crc32(name.encode("utf-8"))])
    return np.random.Generator(np.random.Philox(ss))


def init_conv(seed, name, in_ch, out_ch, k, stride=1, padding=None):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialised convolution."""
    if padding is None:
        padding = (k - 1) // 2
    rng = make_rng(seed, name)
    bound = 1.0 / np.sqrt(in_ch * k * k)
    weight = rng.uniform(-bound, bound, size=(out_ch, in_ch, k, k))
    bias = rng.uniform(-bound, bound, size=out_ch)
    return ConvSpec(weight, bias, stride=stride, padding=padding)


def identity_conv(channels, k=3, stride=1, padding=None):
    """Kernel whose centre tap passes each channel through unchanged."""
    if padding is None:
        padding = (k - 1) // 2
    w = np.zeros((channels, channels, k, k))
    c = k // 2
    w[np.arange(channels), np.arange(channels), c, c] = 1.0
    return ConvSpec(w, np.zeros(channels), stride=stride, padding=padding)


def zero_conv(in_ch, out_ch, k=3, stride=1, padding=None):
    if padding is None:
        padding = (k - 1) // 2
    return ConvSpec(np.zeros((out_ch, in_ch, k, k)), np.zeros(out_ch), stride=stride, padding=padding)


def conv2d(x, spec):
    """Cross-correlation of ``x`` (C, H, W) with ``spec``; returns (out, Ho, Wo)."""
    x = as_tensor(x)
    if spec.transposed:
        raise ValueError("conv2d: got a transposed-layout ConvSpec; use conv_transpose2d")
    c, h, w = x.shape
    if c != spec.in_channels:
        raise ShapeError(
            f"conv2d: input has {c} channels but kernel expects {spec.in_channels}"
        )
    kh, kw = spec.kernel_size
    p, s = spec.padding, spec.stride
    if h + 2 * p < kh or w + 2 * p < kw:
        raise ShapeError(
            f"conv2d: padded input {h + 2 * p}x{w + 2 * p} smaller than kernel {kh}x{kw}"
        )
    if p:
        x = np.pad(x, ((0, 0), (p, p), (p, p)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::s, ::s]
    out = np.tensordot(spec.weight, win, axes=([1, 2, 3], [0, 3, 4]))
    out += spec.bias[:, None, None]
    return check_finite(out, "conv2d")


def conv_transpose2d(x, spec, output_padding=0):
    """Transposed convolution (gradient of ``conv2d`` w.r.t. its input).

    ``spec`` must be built with ``transposed=True``, weight laid out
    (in, out, kh, kw);
    output size per axis is (H - 1) * stride - 2 * padding + k + output_padding.
    """
    x = as_tensor(x)
    if not spec.transposed:
        raise ValueError("conv_transpose2d needs a ConvSpec with transposed=True")
    c, h, w = x.shape
    cin, cout, kh, kw = spec.weight.shape
    if c != cin:
        raise ShapeError(f"conv_transpose2d: input has {c} channels, kernel expects {cin}")
    s, p = spec.stride, spec.padding
    if p > kh - 1 or p > kw - 1:
        raise ShapeError("conv_transpose2d: padding must be < kernel size")
    dil = np.zeros((c, (h - 1) * s + 1, (w - 1) * s + 1))
    dil[:, ::s, ::s] = x
    ph, pw = kh - 1 - p, kw - 1 - p
    dil = np.pad(dil, ((0, 0), (ph, ph + output_padding), (pw, pw + output_padding)))
    flipped = spec.weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    win = sliding_window_view(dil, (kh, kw), axis=(1, 2))
    out = np.tensordot(flipped, win, axes=([1, 2, 3], [0, 3, 4]))
    out += spec.bias[:, None, None]
    return check_finite(out, "conv_transpose2d")


def relu(x):
    return np.maximum(x, 0.0)


def logistic(x):
    x = np.asarray(x, dtype=np.float64)
    # Split on sign so neither branch overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def global_avg_pool(x):
    """Per-channel mean over all spatial positions."""
    x = as_tensor(x)
    return x.mean(axis=(1, 2))


def avg_pool2(x):
    """Non-overlapping 2x2 average pooling; H and W must be even."""
    x = as_tensor(x)
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def upsample_nearest2(x):
    x = as_tensor(x)
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def _bilinear_axis(n_in, n_out):
    """Source indices and weights along one axis (align_corners=False)."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(x, out_h, out_w):
    """Per-channel bilinear resize, half-pixel centres, edge-clamped."""
    x = as_tensor(x)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize target must be >= 1x1, got {out_h}x{out_w}")
    _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return x.copy()
    y0, y1, fy = _bilinear_axis(h, out_h)
    x0, x1, fx = _bilinear_axis(w, out_w)
    top = x[:, y0, :] * (1.0 - fy)[None, :, None] + x[:, y1, :] * fy[None, :, None]
    return top[:, :, x0] * (1.0 - fx)[None, None, :] + top[:, :, x1] * fx[None, None, :]


def l2_normalize(v, epsilon=0.0):
    """``v / sqrt(sum(v**2) + epsilon)``."""
    v = np.asarray(v, dtype=np.float64)
    denom = np.sqrt(np.sum(v * v) + epsilon)
    if denom == 0.0:
        raise ZeroDivisionError("l2_normalize: zero vector with epsilon=0")
    return v / denom
