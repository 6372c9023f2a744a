"""Macro/micro perceptor stacks and the patch embedding that follows them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ConvSpec, ShapeError, as_tensor, conv2d, init_conv, relu, zero_conv

LCP_KERNEL = 5
MCP_KERNEL = 3
PERCEPTOR_DEPTH = 3


@dataclass(frozen=True)
class PerceptorStack:
    """Three channel-preserving Conv-ReLU layers with a shared kernel size."""

    layers: tuple

    def __post_init__(self):
        if len(self.layers) != PERCEPTOR_DEPTH:
            raise ValueError(f"perceptor needs {PERCEPTOR_DEPTH} layers, got {len(self.layers)}")
        sizes = {spec.kernel_size for spec in self.layers}
        if len(sizes) != 1:
            raise ValueError(f"perceptor layers disagree on kernel size: {sizes}")
        for spec in self.layers:
            if spec.in_channels != spec.out_channels:
                raise ValueError("perceptor layers must preserve channel count")
            kh, kw = spec.kernel_size
            if spec.stride != 1 or spec.padding != (kh - 1) // 2:
                raise ValueError("perceptor layers must be same-size (stride 1, pad (k-1)/2)")

    @property
    def channels(self):
        return self.layers[0].in_channels

    @property
    def kernel_size(self):
        return self.layers[0].kernel_size[0]

    def __call__(self, x):
        for spec in self.layers:
            x = relu(conv2d(x, spec))
        return x

    @classmethod
    def seeded(cls, seed, name, channels, k):
        return cls(tuple(init_conv(seed, f"{name}.{i}", channels, channels, k)
                         for i in range(PERCEPTOR_DEPTH)))

    @classmethod
    def zeros(cls, channels, k):
        return cls(tuple(zero_conv(channels, channels, k) for _ in range(PERCEPTOR_DEPTH)))


def dpp_forward(img, lcp, mcp):
    """Association matrix ``LCP(img) + MCP(img + LCP(img))``."""
    img = as_tensor(img, "img")
    if img.shape[0] != lcp.channels or img.shape[0] != mcp.channels:
        raise ShapeError(
            f"dpp_forward: image has {img.shape[0]} channels, perceptors expect "
            f"{lcp.channels}/{mcp.channels}"
        )
    coarse = lcp(img)
    return coarse + mcp(img + coarse)


def make_patch_embed(seed, in_ch, embed_ch, patch):
    return init_conv(seed, "patch_embed", in_ch, embed_ch, patch, stride=patch, padding=0)


def patch_embed(x, embed):
    x = as_tensor(x)
    kh, kw = embed.kernel_size
    if embed.stride != kh or kh != kw or embed.padding != 0:
        raise ValueError("patch embedding needs a square kernel with stride == kernel, no padding")
    _, h, w = x.shape
    if h % kh or w % kw:
        raise ShapeError(f"patch size {kh} does not divide image {h}x{w}")
    return conv2d(x, embed)


def fuse_embed(z_img, m_z, x_img, m_x, embed):
    """Token grids for the template and search streams.

    Both streams share one embedding; the pair plays the role of the
    concatenated structured features.  Returns ``(z_tokens, x_tokens)``.
    """
    z_img, m_z = as_tensor(z_img, "z_img"), as_tensor(m_z, "m_z")
    x_img, m_x = as_tensor(x_img, "x_img"), as_tensor(m_x, "m_x")
    if z_img.shape != m_z.shape or x_img.shape != m_x.shape:
        raise ShapeError("association matrix must match its image's shape")
    return patch_embed(z_img + m_z, embed), patch_embed(x_img + m_x, embed)


@dataclass(frozen=True)
class DualPerception:
    """Seeded LCP/MCP pair; ``enabled=False`` yields a zero association matrix."""

    lcp: PerceptorStack
    mcp: PerceptorStack
    enabled: bool = True

    @classmethod
    def seeded(cls, seed, channels=3, enabled=True):
        return cls(PerceptorStack.seeded(seed, "dpp.lcp", channels, LCP_KERNEL),
                   PerceptorStack.seeded(seed, "dpp.mcp", channels, MCP_KERNEL),
                   enabled)

    def association(self, img):
        if not self.enabled:
            return np.zeros_like(as_tensor(img))
        return dpp_forward(img, self.lcp, self.mcp)

