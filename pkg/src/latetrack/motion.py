"""Normalized box-motion codec.

A motion between two boxes is the 4-vector
[d_center_x / prev.w, d_center_y / prev.h, ln(cur.w / prev.w), ln(cur.h / prev.h)]:
center displacement in units of the previous box size plus log size
ratios. The representation is scale-free, so a predictor trained on one
motion scale transfers to another. The average per-frame speed over a
history window is what predicted motion factors multiply.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .boxes import BoundingBox
from .errors import ValidationError

_SIZE_EPS = 1e-12


@dataclass(frozen=True, slots=True)
class NormalizedMotion:
    dx_over_w: float
    dy_over_h: float
    log_w_ratio: float
    log_h_ratio: float

    def __post_init__(self):
        for v in self.as_tuple():
            if not math.isfinite(v):
                raise ValidationError(f"motion components must be finite, got {self!r}")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.dx_over_w, self.dy_over_h, self.log_w_ratio, self.log_h_ratio)

    @classmethod
    def zero(cls) -> "NormalizedMotion":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True, slots=True)
class MotionHistory:
    """The last k motions between consecutively processed boxes.

    intervals[i] is the frame gap the i-th motion spans; >= 1 because a
    tracker never revisits a frame.
    """

    motions: tuple
    intervals: tuple

    def __post_init__(self):
        object.__setattr__(self, "motions", tuple(self.motions))
        object.__setattr__(self, "intervals", tuple(int(d) for d in self.intervals))
        if len(self.motions) == 0:
            raise ValidationError("history must contain at least one motion")
        if len(self.motions) != len(self.intervals):
            raise ValidationError(
                f"history has {len(self.motions)} motions but {len(self.intervals)} intervals"
            )
        if any(d < 1 for d in self.intervals):
            raise ValidationError(f"intervals must be >= 1, got {self.intervals}")

    @property
    def k(self) -> int:
        return len(self.motions)


def encode_motion(prev: BoundingBox, cur: BoundingBox) -> NormalizedMotion:
    """Motion from prev to cur, normalized by prev's scale."""
    if min(prev.w, prev.h, cur.w, cur.h) <= _SIZE_EPS:
        raise ValidationError("cannot encode motion for degenerate box sizes")
    return NormalizedMotion(
        (cur.cx - prev.cx) / prev.w,
        (cur.cy - prev.cy) / prev.h,
        math.log(cur.w / prev.w),
        math.log(cur.h / prev.h),
    )


def apply_motion(base: BoundingBox, m: NormalizedMotion) -> BoundingBox:
    """Inverse of encode_motion: apply m to base, normalized by base's scale."""
    cx = base.cx + m.dx_over_w * base.w
    cy = base.cy + m.dy_over_h * base.h
    w = base.w * math.exp(m.log_w_ratio)
    h = base.h * math.exp(m.log_h_ratio)
    return BoundingBox.from_center(cx, cy, w, h)


def invert_motion(cur: BoundingBox, m: NormalizedMotion) -> BoundingBox:
    """Solve apply_motion for its base: the box m started from, given
    the box it led to."""
    w = cur.w / math.exp(m.log_w_ratio)
    h = cur.h / math.exp(m.log_h_ratio)
    if min(w, h) <= _SIZE_EPS:
        raise ValidationError("cannot invert motion into a degenerate box")
    return BoundingBox.from_center(cur.cx - m.dx_over_w * w, cur.cy - m.dy_over_h * h, w, h)


def unroll_history(latest: BoundingBox, history: MotionHistory) -> list:
    """The k+1 boxes a history window was encoded from, oldest first,
    ending at `latest`."""
    boxes = [latest]
    for m in reversed(history.motions):
        boxes.append(invert_motion(boxes[-1], m))
    boxes.reverse()
    return boxes


def average_speed(history: MotionHistory) -> NormalizedMotion:
    """Componentwise mean of motion / interval over the history window."""
    k = history.k
    acc = [0.0, 0.0, 0.0, 0.0]
    for m, d in zip(history.motions, history.intervals):
        t = m.as_tuple()
        for i in range(4):
            acc[i] += t[i] / d
    return NormalizedMotion(*(a / k for a in acc))


def apply_factor(factor: NormalizedMotion, speed: NormalizedMotion) -> NormalizedMotion:
    """Elementwise product: a predicted factor scaled by the average speed."""
    f = factor.as_tuple()
    s = speed.as_tuple()
    return NormalizedMotion(*(f[i] * s[i] for i in range(4)))
