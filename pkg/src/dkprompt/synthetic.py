"""Synthetic night-time sequences: a lit square drifting over a dark,
noisy background."""

from __future__ import annotations

import numpy as np

from .boxes import BBox
from .tensor import make_rng

TARGET_COLOR = (0.85, 0.75, 0.55)


def draw_square(frame, box, color=TARGET_COLOR):
    x1, y1 = int(round(box.x)), int(round(box.y))
    x2, y2 = int(round(box.x2)), int(round(box.y2))
    frame[:, y1:y2, x1:x2] = np.asarray(color, dtype=np.float64)[:, None, None]
    return frame


def plant_glare(frame, cx, cy, size=4, factor=10.0):
    """Multiply a ``size`` x ``size`` patch by ``factor``."""
    x1, y1 = int(cx) - size // 2, int(cy) - size // 2
    frame[:, y1:y1 + size, x1:x1 + size] *= factor
    return frame


def moving_square(n_frames=20, height=192, width=256, box_size=32, start=None,
                  velocity=(3.0, 2.0), noise=0.02, background=0.05, seed=0,
                  color=TARGET_COLOR):
    """Frames (3, H, W) and ground-truth boxes for a square moving at constant
    velocity, reflecting off the frame edges."""
    rng = make_rng(seed, "synthetic.noise")
    if start is None:
        start = ((width - box_size) / 2.0, (height - box_size) / 2.0)
    x, y = float(start[0]), float(start[1])
    vx, vy = float(velocity[0]), float(velocity[1])
    frames, boxes = [], []
    for _ in range(n_frames):
        frame = background + noise * rng.standard_normal((3, height, width))
        box = BBox(round(x), round(y), box_size, box_size)
        draw_square(frame, box, color)
        frames.append(np.clip(frame, 0.0, 1.0))
        boxes.append(box)
        x, y = x + vx, y + vy
        if not 0 <= x <= width - box_size:
            vx = -vx
            x = min(max(x, 0.0), width - box_size)
        if not 0 <= y <= height - box_size:
            vy = -vy
            y = min(max(y, 0.0), height - box_size)
    return frames, boxes


def static_square(n_frames=20, **kwargs):
    kwargs["velocity"] = (0.0, 0.0)
    return moving_square(n_frames, **kwargs)
