"""End-to-end tracker: perception, embedding, a frozen convolutional
backbone stub with prompt injection, and a corner head.

The backbone and head carry seeded, untrained weights.  They keep every
tensor at the shape the prompt modules expect; localisation quality comes
from matching search tokens against the template's token signature.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .boxes import BBox
from .dke import DirectionalEncoder, DirectionalKernel
from .dpp import DualPerception, fuse_embed, make_patch_embed, patch_embed
from .kgp import NORM_MODES, GateBank, PromptGuide
from .metrics import giou
from .tensor import ConvSpec, as_tensor, conv2d, init_conv, relu


@dataclass(frozen=True)
class ModelConfig:
    seed: int = 0
    template_size: int = 128
    search_size: int = 256
    patch: int = 16
    embed_ch: int = 64
    backbone_blocks: int = 4
    inject_after: tuple | None = None  # None: after every block
    gate_groups: int = 4
    norm_mode: str = "l2"
    lambda_l1: float = 2.0
    lambda_giou: float = 5.0
    n_ie: int = 2
    norm_eps: float = 1e-12
    rho_floor: float = 1e-8
    tau: float = 0.05
    alpha: float = 1.0
    beta: float = 0.5
    template_context: float = 1.0
    search_context: float = 2.0
    head_temperature: float = 0.1
    use_dpp: bool = True
    use_dke: bool = True
    use_kgp: bool = True

    def __post_init__(self):
        for size in (self.template_size, self.search_size):
            if size % self.patch:
                raise ValueError(f"crop size {size} not divisible by patch {self.patch}")
        if self.lambda_l1 <= 0 or self.lambda_giou <= 0:
            raise ValueError("loss weights must be positive")
        if self.n_ie not in (0, 1, 2, 3):
            raise ValueError(f"n_ie must be in 0..3, got {self.n_ie}")
        if self.norm_mode not in NORM_MODES:
            raise ValueError(f"norm_mode must be one of {NORM_MODES}")
        if self.inject_after is not None:
            blocks = tuple(sorted({int(i) for i in self.inject_after}))
            if any(not 0 <= i < self.backbone_blocks for i in blocks):
                raise ValueError(f"inject_after {blocks} outside 0..{self.backbone_blocks - 1}")
            object.__setattr__(self, "inject_after", blocks)

    @property
    def injection_points(self):
        if self.inject_after is None:
            return tuple(range(self.backbone_blocks))
        return self.inject_after

    @property
    def search_grid(self):
        return self.search_size // self.patch

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def crop_resize(frame, cx, cy, side_w, side_h, out):
    """Crop ``side_w`` x ``side_h`` pixels centred on (cx, cy), bilinearly
    resampled to ``out`` x ``out``.  Pixels outside the frame read as zero."""
    frame = as_tensor(frame, "frame")
    _, h, w = frame.shape
    t = np.arange(out) + 0.5
    ys = cy - side_h / 2.0 + t * (side_h / out) - 0.5
    xs = cx - side_w / 2.0 + t * (side_w / out) - 0.5
    padded = np.pad(frame, ((0, 0), (1, 1), (1, 1)))
    # Shift by the one-pixel zero border; clip so far-outside samples read zeros.
    ys = np.clip(ys + 1.0, 0.0, h + 1.0)
    xs = np.clip(xs + 1.0, 0.0, w + 1.0)
    y0 = np.minimum(np.floor(ys).astype(np.intp), h)
    x0 = np.minimum(np.floor(xs).astype(np.intp), w)
    fy = (ys - y0)[None, :, None]
    fx = (xs - x0)[None, None, :]
    rows = padded[:, y0, :] * (1.0 - fy) + padded[:, y0 + 1, :] * fy
    return rows[:, :, x0] * (1.0 - fx) + rows[:, :, x0 + 1] * fx


@dataclass(frozen=True)
class ResidualBlock:
    conv1: ConvSpec
    conv2: ConvSpec

    def __call__(self, x):
        return x + conv2d(relu(conv2d(x, self.conv1)), self.conv2)


def _unit_channels(x, eps=1e-12):
    return x / np.sqrt((x * x).sum(axis=0, keepdims=True) + eps)


def _softmax_map(logits):
    e = np.exp(logits - logits.max())
    return e / e.sum()


@dataclass(frozen=True)
class CornerHead:
    """Two box-filter branches over a shared template-matching response.

    The response is a 1x1 convolution of unit-normalised tokens with the
    template's unit token signature (cosine similarity), standardised to
    zero mean and unit variance over the grid.  The top-left branch averages
    the response over the ``extent`` x ``extent`` window whose top-left cell
    is the output cell; the bottom-right branch uses the window ending there.
    Both feed a temperature softmax.
    """

    extent: int
    temperature: float = 0.1

    def _branch(self, z, pad):
        k = self.extent
        box = ConvSpec(np.full((1, 1, k, k), 1.0 / (k * k)), np.zeros(1))
        return conv2d(np.pad(z, pad, constant_values=z.min())[None], box)[0]

    def __call__(self, tokens, signature):
        w = signature.reshape(1, -1, 1, 1)
        response = conv2d(_unit_channels(tokens), ConvSpec(w, np.zeros(1)))[0]
        spread = response.std()
        z = (response - response.mean()) / spread if spread > 1e-12 else np.zeros_like(response)
        k = self.extent - 1
        tl = _softmax_map(self._branch(z, ((0, k), (0, k))) / self.temperature)
        br = _softmax_map(self._branch(z, ((k, 0), (k, 0))) / self.temperature)
        return tl, br, response


def decode_corners(tl_map, br_map, min_size=2.0):
    """Expected corner coordinates of two nonnegative score maps.

    Maps are normalised by their total mass (the head emits softmax maps, so
    this is the soft-argmax).  Coordinates are (column, row) in map cells.
    """
    tl_map = np.asarray(tl_map, dtype=np.float64)
    br_map = np.asarray(br_map, dtype=np.float64)
    if tl_map.ndim == 3:
        tl_map, br_map = tl_map[0], br_map[0]
    if tl_map.shape != br_map.shape or tl_map.ndim != 2:
        raise ValueError(f"corner maps must be matching 2-D grids, got {tl_map.shape} / {br_map.shape}")
    rows, cols = np.indices(tl_map.shape, dtype=np.float64)

    def expect(m):
        if np.any(m < 0):
            raise ValueError("corner maps must be nonnegative")
        total = m.sum()
        if total <= 0:
            m, total = np.ones_like(m), m.size
        return float((m * cols).sum() / total), float((m * rows).sum() / total)

    x1, y1 = expect(tl_map)
    x2, y2 = expect(br_map)
    x1, x2 = min(x1, x2), max(x1, x2)
    y1, y2 = min(y1, y2), max(y1, y2)
    if x2 - x1 < min_size:
        mid = (x1 + x2) / 2.0
        x1, x2 = mid - min_size / 2.0, mid + min_size / 2.0
    if y2 - y1 < min_size:
        mid = (y1 + y2) / 2.0
        y1, y2 = mid - min_size / 2.0, mid + min_size / 2.0
    return BBox.from_corners(x1, y1, x2, y2)


def locate_loss(pred, gt, cfg=None, image_size=None):
    """Weighted L1 on normalised corners plus weighted (1 - GIoU).

    Returns ``(total, l1_term, giou_term)`` where the terms already carry
    their weights.
    """
    cfg = cfg or ModelConfig()
    size = float(image_size or cfg.search_size)
    l1 = float(np.abs(pred.corners() - gt.corners()).sum() / size)
    l1_term = cfg.lambda_l1 * l1
    giou_term = cfg.lambda_giou * (1.0 - giou(pred, gt))
    return l1_term + giou_term, l1_term, giou_term


@dataclass
class TrackerState:
    dk: DirectionalKernel | None
    template_tokens: np.ndarray
    template_refined: np.ndarray
    signature: np.ndarray
    last_box: BBox
    frame_index: int = 0
    frame_shape: tuple = field(default=(0, 0))


@dataclass
class FrameOutput:
    box: BBox
    score_maps: dict
    prompts: list


class Tracker:
    """Frozen model assembled from a :class:`ModelConfig`."""

    def __init__(self, cfg=None):
        cfg = cfg or ModelConfig()
        self.cfg = cfg
        s = cfg.seed
        self.dpp = DualPerception.seeded(s, 3, enabled=cfg.use_dpp)
        self.embed = make_patch_embed(s, 3, cfg.embed_ch, cfg.patch)
        self.blocks = tuple(
            ResidualBlock(init_conv(s, f"backbone.{i}.a", cfg.embed_ch, cfg.embed_ch, 3),
                          init_conv(s, f"backbone.{i}.b", cfg.embed_ch, cfg.embed_ch, 3))
            for i in range(cfg.backbone_blocks)
        )
        self.encoder = DirectionalEncoder.seeded(s, cfg.embed_ch, n_ie=cfg.n_ie, enabled=cfg.use_dke)
        if cfg.alpha != 1.0 or cfg.beta != 0.5:
            params = dataclasses.replace(self.encoder.params, alpha=cfg.alpha, beta=cfg.beta)
            self.encoder = dataclasses.replace(self.encoder, params=params)
        self.guide = PromptGuide(GateBank.seeded(s, cfg.embed_ch, cfg.gate_groups), cfg.norm_mode, cfg.norm_eps)
        extent = max(1, int(round(cfg.search_grid / cfg.search_context)))
        self.head = CornerHead(extent, cfg.head_temperature)

    # -- feature path -------------------------------------------------

    def embed_pair(self, z_img, x_img):
        return fuse_embed(z_img, self.dpp.association(z_img), x_img, self.dpp.association(x_img), self.embed)

    def embed_one(self, img):
        return patch_embed(as_tensor(img) + self.dpp.association(img), self.embed)

    def inject(self, tokens, dk):
        """Prompt injection after one backbone block; returns (tokens, prompt)."""
        cfg = self.cfg
        if not (cfg.use_dke or cfg.use_kgp):
            return tokens, None
        # Without DKE the refined stream is the tokens themselves.
        refined = self.encoder.refine(tokens) if cfg.use_dke else tokens
        if not cfg.use_kgp:
            return refined + tokens, None
        out, prompt = self.guide(dk, refined, tokens)
        return out, prompt

    def backbone(self, tokens, dk):
        prompts = []
        points = set(self.cfg.injection_points)
        for i, block in enumerate(self.blocks):
            tokens = block(tokens)
            if i in points:
                tokens, prompt = self.inject(tokens, dk)
                if prompt is not None:
                    prompts.append(prompt)
        return tokens, prompts

    # -- tracking -----------------------------------------------------

    def template_crop(self, frame, box):
        k = self.cfg.template_context
        cx, cy = box.center
        return crop_resize(frame, cx, cy, k * box.w, k * box.h, self.cfg.template_size)

    def search_crop(self, frame, box):
        k = self.cfg.search_context
        cx, cy = box.center
        return crop_resize(frame, cx, cy, k * box.w, k * box.h, self.cfg.search_size)

    def init(self, frame, box):
        frame = as_tensor(frame, "frame")
        if frame.shape[0] != 3:
            raise ValueError(f"frame must have 3 channels, got {frame.shape[0]}")
        if box.w < 2 or box.h < 2:
            raise ValueError(f"degenerate initial box {box}")
        _, h, w = frame.shape
        if not box.inside(w, h):
            raise ValueError(f"initial box {box} outside {w}x{h} frame")
        tokens = self.embed_one(self.template_crop(frame, box))
        refined = self.encoder.refine(tokens) if self.cfg.use_dke else tokens
        # With DKE disabled the encoder's kernel is TST on the raw tokens.
        dk = self.encoder.kernel(tokens) if (self.cfg.use_dke or self.cfg.use_kgp) else None
        matched, _ = self.backbone(tokens, dk)
        signature = _unit_channels(matched.mean(axis=(1, 2))[:, None, None])[:, 0, 0]
        return TrackerState(dk, tokens, refined, signature, box, 0, (h, w))

    def track(self, state, frame):
        if state is None or state.signature is None:
            raise RuntimeError("tracker state is not initialised")
        frame = as_tensor(frame, "frame")
        _, h, w = frame.shape
        last = state.last_box
        crop = self.search_crop(frame, last)
        tokens, prompts = self.backbone(self.embed_one(crop), state.dk)
        tl, br, response = self.head(tokens, state.signature)
        cell = decode_corners(tl, br)
        grid = self.cfg.search_grid
        sx = self.cfg.search_context * last.w / grid
        sy = self.cfg.search_context * last.h / grid
        cx, cy = last.center
        x0 = cx - self.cfg.search_context * last.w / 2.0
        y0 = cy - self.cfg.search_context * last.h / 2.0
        # Cell i spans [i, i + 1): a top-left cell maps to its leading edge,
        # a bottom-right cell to its trailing edge.
        box = BBox.from_corners(x0 + cell.x * sx, y0 + cell.y * sy,
                                x0 + (cell.x2 + 1.0) * sx, y0 + (cell.y2 + 1.0) * sy)
        box = box.clamp(w, h)
        new_state = dataclasses.replace(state, last_box=box, frame_index=state.frame_index + 1,
                                        frame_shape=(h, w))
        maps = {"response": response, "tl": tl, "br": br}
        return new_state, FrameOutput(box, maps, prompts)


def init_tracker(frame, box, cfg=None):
    tracker = Tracker(cfg)
    return tracker, tracker.init(frame, box)


def track_frame(tracker, state, frame):
    """One inference step; returns ``(state, box, score_maps)``."""
    state, out = tracker.track(state, frame)
    return state, out.box, out.score_maps


def run_sequence(frames, init_box, cfg=None):
    """Track ``frames[1:]`` from ``init_box`` on ``frames[0]``.

    Returns predicted boxes (the first is the initial box) and the score
    maps of every tracked frame.
    """
    tracker, state = init_tracker(frames[0], init_box, cfg)
    boxes, maps = [init_box], []
    for frame in frames[1:]:
        state, out = tracker.track(state, frame)
        boxes.append(out.box)
        maps.append(out.score_maps)
    return boxes, maps
