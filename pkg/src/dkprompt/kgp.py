"""Kernel-guided prompting: per-channel affinity between the directional
kernel and search features, normalisation into a prompt, channel
emphasis and grouped gating."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, as_tensor, logistic, make_rng, resize_bilinear

NORM_MODES = ("l2", "l1", "softmax", "sigmoid", "minmax")
DEFAULT_EPS = 1e-12


def channel_descriptor(dk, f_x):
    """Depthwise inner product of the spatially aligned kernel with ``f_x``."""
    values = getattr(dk, "values", dk)
    values = as_tensor(values, "dk")
    f_x = as_tensor(f_x, "f_x")
    if values.shape[0] != f_x.shape[0]:
        raise ShapeError(f"channel_descriptor: dk has {values.shape[0]} channels, f_x has {f_x.shape[0]}")
    aligned = resize_bilinear(values, f_x.shape[1], f_x.shape[2])
    return np.einsum("chw,chw->c", aligned, f_x)


@dataclass(frozen=True)
class PromptVector:
    values: np.ndarray
    mode: str

    def entropy(self):
        """Shannon entropy of ``|P|`` treated as a distribution over channels."""
        mag = np.abs(self.values)
        total = mag.sum()
        if total == 0.0:
            return 0.0
        p = mag[mag > 0] / total
        return float(-(p * np.log(p)).sum())


def prompt_from_sim(sim, mode="l2", epsilon=DEFAULT_EPS):
    sim = np.asarray(sim, dtype=np.float64)
    if mode == "l2":
        # Same quantity as sim / sqrt(sum(sim^2) + eps), evaluated on sim / max|sim|
        # so squares neither underflow nor overflow.
        m = np.max(np.abs(sim)) if sim.size else 0.0
        if m == 0.0:
            if epsilon == 0.0:
                raise ZeroDivisionError("l2 prompt of a zero descriptor with epsilon=0")
            values = np.zeros_like(sim)
        else:
            u = sim / m
            values = u / np.sqrt(np.sum(u * u) + epsilon / m / m)
    elif mode == "l1":
        denom = np.sum(np.abs(sim)) + epsilon
        if denom == 0.0:
            raise ZeroDivisionError("l1 prompt of a zero descriptor with epsilon=0")
        values = sim / denom
    elif mode == "softmax":
        e = np.exp(sim - sim.max())
        values = e / e.sum()
    elif mode == "sigmoid":
        values = logistic(sim)
    elif mode == "minmax":
        span = sim.max() - sim.min() + epsilon
        if span == 0.0:
            raise ZeroDivisionError("min-max prompt of a constant descriptor with epsilon=0")
        values = (sim - sim.min()) / span
    else:
        raise ValueError(f"unknown normalisation mode {mode!r}; expected one of {NORM_MODES}")
    return PromptVector(values, mode)


def apply_prompt(p, f_hr, f_x):
    """``(P_c + 1) * (F_hr + F_x)`` broadcast over each channel."""
    values = getattr(p, "values", p)
    f_hr, f_x = as_tensor(f_hr, "f_hr"), as_tensor(f_x, "f_x")
    if f_hr.shape != f_x.shape:
        raise ShapeError(f"apply_prompt: f_hr {f_hr.shape} vs f_x {f_x.shape}")
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (f_x.shape[0],):
        raise ShapeError(f"prompt has {values.shape} entries for {f_x.shape[0]} channels")
    return (values + 1.0)[:, None, None] * (f_hr + f_x)


@dataclass(frozen=True)
class GateBank:
    """Learnable gate logits, one per contiguous channel group.

    ``groups`` is a sequence of (start, stop) channel ranges.
    """

    logits: np.ndarray
    groups: tuple

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64).reshape(-1)
        groups = tuple((int(a), int(b)) for a, b in self.groups)
        if len(groups) != logits.size:
            raise ValueError(f"{logits.size} gates for {len(groups)} groups")
        object.__setattr__(self, "logits", logits)
        object.__setattr__(self, "groups", groups)

    @property
    def gates(self):
        return logistic(self.logits)

    def check_partition(self, channels):
        cursor = 0
        for a, b in sorted(self.groups):
            if a != cursor or b <= a:
                raise ValueError(f"gate groups leave a gap or overlap at channel {cursor}: {self.groups}")
            cursor = b
        if cursor != channels:
            raise ValueError(f"gate groups cover {cursor} channels, features have {channels}")

    @classmethod
    def contiguous(cls, channels, n_groups, logits=None):
        if not 1 <= n_groups <= channels:
            raise ValueError(f"cannot split {channels} channels into {n_groups} groups")
        edges = np.linspace(0, channels, n_groups + 1).round().astype(int)
        groups = tuple(zip(edges[:-1], edges[1:]))
        if logits is None:
            logits = np.zeros(n_groups)
        return cls(np.asarray(logits, dtype=np.float64), groups)

    @classmethod
    def seeded(cls, seed, channels, n_groups):
        rng = make_rng(seed, "kgp.gates")
        return cls.contiguous(channels, n_groups, rng.uniform(-1.0, 1.0, size=n_groups))

    @classmethod
    def from_gates(cls, channels, gates):
        gates = np.asarray(gates, dtype=np.float64)
        return cls.contiguous(channels, gates.size, np.log(gates) - np.log1p(-gates))


def spatial_gate(f_e, f_hr, bank):
    """Per-group convex blend ``g * F_e + (1 - g) * F_hr``."""
    f_e, f_hr = as_tensor(f_e, "f_e"), as_tensor(f_hr, "f_hr")
    if f_e.shape != f_hr.shape:
        raise ShapeError(f"spatial_gate: {f_e.shape} vs {f_hr.shape}")
    bank.check_partition(f_e.shape[0])
    out = np.empty_like(f_e)
    for (a, b), g in zip(bank.groups, bank.gates):
        out[a:b] = g * f_e[a:b] + (1.0 - g) * f_hr[a:b]
    # Rounding guard: the blend is convex, keep it inside the input hull.
    return np.clip(out, np.minimum(f_e, f_hr), np.maximum(f_e, f_hr))


@dataclass(frozen=True)
class PromptGuide:
    """Descriptor, normalisation, emphasis and gating in one call."""

    bank: GateBank
    mode: str = "l2"
    epsilon: float = DEFAULT_EPS

    def __call__(self, dk, f_hr, f_x):
        sim = channel_descriptor(dk, f_hr)
        prompt = prompt_from_sim(sim, self.mode, self.epsilon)
        emphasised = apply_prompt(prompt, f_hr, f_x)
        return spatial_gate(emphasised, f_hr, self.bank), prompt
