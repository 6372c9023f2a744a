"""Back-projection refinement with illumination estimation, and the
three-sigma channel truncation that turns template features into the
directional kernel."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .tensor import (
    ConvSpec,
    ShapeError,
    as_tensor,
    avg_pool2,
    conv2d,
    conv_transpose2d,
    global_avg_pool,
    identity_conv,
    init_conv,
    logistic,
    make_rng,
    relu,
)

STAGE_DEPTH = 3
MAX_IE = 3
# Seeded projection weights are exact resamplers plus this much of a
# uniform(+-1/sqrt(fan_in)) draw, so FD(FP(f)) starts close to f.
STAGE_JITTER = 0.25
# Gain logit crosses zero where local brightness is this multiple of the mean.
IE_KNEE = 3.0


@dataclass(frozen=True)
class IlluminationEstimator:
    """Two 3x3 convolutions producing a multiplicative gain in (0, 1).

    ``conv_a`` estimates local brightness, which is divided by its per-channel
    global mean before ``conv_b`` maps it to a gain logit.  The normalisation
    makes the gain depend on brightness relative to the whole map, not on
    absolute feature scale.
    """

    conv_a: ConvSpec
    conv_b: ConvSpec
    eps: float = 1e-12

    def gain(self, f):
        local = relu(conv2d(f, self.conv_a))
        level = local.mean(axis=(1, 2), keepdims=True)
        return logistic(conv2d(local / (level + self.eps), self.conv_b))

    def __call__(self, f):
        return f * self.gain(f)

    @classmethod
    def seeded(cls, seed, name, channels, knee=IE_KNEE):
        # Depthwise 3x3 box average, then a per-channel decreasing read-out
        # with seeded slope; gain is 1/2 at ``knee`` times mean brightness.
        rng = make_rng(seed, name)
        slope = rng.uniform(1.0, 2.0, size=channels)
        idx = np.arange(channels)
        wa = np.zeros((channels, channels, 3, 3))
        wa[idx, idx] = 1.0 / 9.0
        wb = np.zeros((channels, channels, 3, 3))
        wb[idx, idx, 1, 1] = -slope
        return cls(ConvSpec(wa, np.zeros(channels), padding=1),
                   ConvSpec(wb, knee * slope, padding=1))


def ie_apply(f, ie):
    f = as_tensor(f)
    if f.shape[0] != ie.conv_a.in_channels:
        raise ShapeError(f"ie_apply: {f.shape[0]} channels, estimator expects {ie.conv_a.in_channels}")
    return ie(f)


@dataclass(frozen=True)
class ProjectionStage:
    """Resampling layer followed by two same-size 3x3 layers.

    ``direction='up'`` makes the first layer a stride-2 transposed
    convolution (x2 spatial); ``'down'`` makes it a stride-2 convolution
    (/2 spatial).  Every layer is followed by ReLU unless ``relu_flags``
    says otherwise.
    """

    direction: str
    layers: tuple
    relu_flags: tuple = (True, True, True)

    def __post_init__(self):
        if self.direction not in ("up", "down"):
            raise ValueError(f"direction must be 'up' or 'down', got {self.direction!r}")
        if self.layers and self.layers[0].transposed != (self.direction == "up"):
            raise ValueError("an up stage starts with a transposed layer, a down stage with a plain one")
        if len(self.layers) != STAGE_DEPTH or len(self.relu_flags) != STAGE_DEPTH:
            raise ValueError(f"projection stage needs exactly {STAGE_DEPTH} layers")
        for spec in self.layers:
            if tuple(spec.kernel_size) != (3, 3):
                raise ValueError("projection layers are 3x3")

    def __call__(self, x):
        first, *rest = self.layers
        if self.direction == "up":
            x = conv_transpose2d(x, first, output_padding=1)
        else:
            x = conv2d(x, first)
        if self.relu_flags[0]:
            x = relu(x)
        for spec, act in zip(rest, self.relu_flags[1:]):
            x = conv2d(x, spec)
            if act:
                x = relu(x)
        return x

    @classmethod
    def seeded(cls, seed, name, channels, direction, jitter=STAGE_JITTER):
        base = cls.exact_resample(channels, direction)
        layers = []
        for i, spec in enumerate(base.layers):
            noise = init_conv(seed, f"{name}.{i}", channels, channels, 3)
            layers.append(ConvSpec(spec.weight + jitter * noise.weight, jitter * noise.bias,
                                   stride=spec.stride, padding=spec.padding, transposed=spec.transposed))
        return cls(direction, tuple(layers))

    @classmethod
    def exact_resample(cls, channels, direction):
        """Nearest-neighbour x2 (up) or 2x2 average (down) with identity tail."""
        w = np.zeros((channels, channels, 3, 3))
        idx = np.arange(channels)
        if direction == "up":
            w[idx, idx, 1, 1] = 1.0
            w[idx, idx, 1, 2] = 1.0
            w[idx, idx, 2, 1] = 1.0
            w[idx, idx, 2, 2] = 1.0
        else:
            w[idx, idx, 1:, 1:] = 0.25
        first = ConvSpec(w, np.zeros(channels), stride=2, padding=1, transposed=direction == "up")
        return cls(direction, (first, identity_conv(channels), identity_conv(channels)))


@dataclass(frozen=True)
class BpmParams:
    """Parameters of the back-projection module.

    ``ies`` holds the illumination estimators by site: index 0 acts on the
    first up-projection, 1 on the back-projection residual, 2 on the
    module output.  ``None`` leaves that site as a pass-through.
    """

    fp1: ProjectionStage
    fp2: ProjectionStage
    fd1: ProjectionStage
    ies: tuple = (None, None, None)
    alpha: float = 1.0
    beta: float = 0.5

    def __post_init__(self):
        if len(self.ies) != MAX_IE:
            raise ValueError(f"ies must have {MAX_IE} slots")
        if (self.fp1.direction, self.fp2.direction, self.fd1.direction) != ("up", "up", "down"):
            raise ValueError("fp1/fp2 must be up-projections and fd1 a down-projection")

    @property
    def ie1(self):
        return self.ies[0]

    @property
    def ie2(self):
        return self.ies[1]

    @property
    def n_ie(self):
        return sum(ie is not None for ie in self.ies)

    @classmethod
    def seeded(cls, seed, channels, n_ie=2, alpha=1.0, beta=0.5):
        if not 0 <= n_ie <= MAX_IE:
            raise ValueError(f"n_ie must be in 0..{MAX_IE}, got {n_ie}")
        ies = tuple(IlluminationEstimator.seeded(seed, f"dke.ie{i + 1}", channels) if i < n_ie else None
                    for i in range(MAX_IE))
        return cls(ProjectionStage.seeded(seed, "dke.fp1", channels, "up"),
                   ProjectionStage.seeded(seed, "dke.fp2", channels, "up"),
                   ProjectionStage.seeded(seed, "dke.fd1", channels, "down"),
                   ies, alpha, beta)

    def with_n_ie(self, n_ie, seed):
        """Same projections, estimator sites filled up to ``n_ie``."""
        channels = self.fp1.layers[1].in_channels
        ies = tuple(self.ies[i] or IlluminationEstimator.seeded(seed, f"dke.ie{i + 1}", channels)
                    if i < n_ie else None for i in range(MAX_IE))
        return replace(self, ies=ies)


def _ie(site, x):
    return x if site is None else site(x)


def bpm_forward(f, p):
    """Back-projection with illumination estimation; output is (C, 2H, 2W)."""
    f = as_tensor(f)
    _, h, w = f.shape
    if h % 2 or w % 2:
        raise ShapeError(f"bpm_forward needs even spatial dims, got {h}x{w}")
    up = p.fp1(f)
    lit = _ie(p.ies[0], up)
    back = p.fd1(lit)
    resid = _ie(p.ies[1], back - p.beta * f)
    out = p.alpha * lit + p.fp2(resid)
    return _ie(p.ies[2], out)


@dataclass(frozen=True)
class TruncationMask:
    bits: np.ndarray
    means: np.ndarray = field(repr=False)
    mu: float = 0.0
    sigma: float = 0.0

    @property
    def kept(self):
        return int(self.bits.sum())


def tst_mask(f_z):
    """Keep channel c iff its spatial mean lies within 3 sigma of the mean of means."""
    means = global_avg_pool(f_z)
    mu = float(means.mean())
    sigma = float(means.std())
    bits = np.abs(means - mu) <= 3.0 * sigma
    return TruncationMask(bits, means, mu, sigma)


@dataclass(frozen=True)
class DirectionalKernel:
    values: np.ndarray
    mask: TruncationMask

    @property
    def shape(self):
        return self.values.shape


def make_dk(f_z):
    f_z = as_tensor(f_z, "f_z")
    mask = tst_mask(f_z)
    values = np.where(mask.bits[:, None, None], f_z, 0.0)
    values.setflags(write=False)
    return DirectionalKernel(values, mask)


@dataclass(frozen=True)
class DirectionalEncoder:
    """BPM at double resolution followed by a 2x2 average back to the token grid."""

    params: BpmParams
    enabled: bool = True

    @classmethod
    def seeded(cls, seed, channels, n_ie=2, enabled=True):
        return cls(BpmParams.seeded(seed, channels, n_ie=n_ie), enabled)

    def refine(self, tokens):
        return avg_pool2(bpm_forward(tokens, self.params))

    def kernel(self, template_tokens):
        refined = self.refine(template_tokens) if self.enabled else as_tensor(template_tokens)
        return make_dk(refined)
