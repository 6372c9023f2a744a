from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner (x, y), width and height in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"BBox.{name} is not finite: {v}")
            object.__setattr__(self, name, v)
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"BBox needs positive size, got w={self.w}, h={self.h}")

    @classmethod
    def from_corners(cls, x1, y1, x2, y2):
        return cls(x1, y1, x2 - x1, y2 - y1)

    @classmethod
    def from_center(cls, cx, cy, w, h):
        return cls(cx - w / 2.0, cy - h / 2.0, w, h)

    @property
    def x2(self):
        return self.x + self.w

    @property
    def y2(self):
        return self.y + self.h

    @property
    def center(self):
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @property
    def area(self):
        return self.w * self.h

    def corners(self):
        return np.array([self.x, self.y, self.x2, self.y2])

    def as_tuple(self):
        return (self.x, self.y, self.w, self.h)

    def clamp(self, width, height, min_size=2.0):
        """Clip to ``[0, width] x [0, height]`` keeping at least ``min_size`` per side."""
        x1 = min(max(self.x, 0.0), width - min_size)
        y1 = min(max(self.y, 0.0), height - min_size)
        x2 = min(max(self.x2, x1 + min_size), width)
        y2 = min(max(self.y2, y1 + min_size), height)
        return BBox.from_corners(x1, y1, x2, y2)

    def inside(self, width, height):
        return self.x >= 0 and self.y >= 0 and self.x2 <= width and self.y2 <= height
