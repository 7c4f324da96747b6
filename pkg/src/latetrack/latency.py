"""Per-invocation processing-time models for trackers and predictors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ReplayExhaustedError, ValidationError

CONSTANT = "constant"
GAUSSIAN = "gaussian_truncated"
REPLAY = "replay"


@dataclass(frozen=True, slots=True)
class LatencyProfile:
    """Config for a latency source; per-run samplers are built from it.

    Draws are clamped at `floor`, so sampled latency >= floor >= 0 always.
    The replay kind yields recorded values in order and errs when exhausted.
    """

    kind: str
    mean: float = 0.0
    stddev: float = 0.0
    floor: float = 0.0
    replay_values: tuple = ()
    seed: int = 0

    def __post_init__(self):
        if self.kind not in (CONSTANT, GAUSSIAN, REPLAY):
            raise ValidationError(f"unknown latency kind {self.kind!r}")
        if self.floor < 0 or not math.isfinite(self.floor):
            raise ValidationError(f"floor must be >= 0, got {self.floor}")
        if self.kind == CONSTANT and self.mean < self.floor:
            raise ValidationError(f"constant latency {self.mean} below floor {self.floor}")
        if self.kind == GAUSSIAN and self.stddev < 0:
            raise ValidationError(f"stddev must be >= 0, got {self.stddev}")
        if self.kind == REPLAY:
            object.__setattr__(self, "replay_values", tuple(float(v) for v in self.replay_values))
            if not self.replay_values:
                raise ValidationError("replay profile needs at least one value")
            if any(v < self.floor for v in self.replay_values):
                raise ValidationError("replay latency below floor")

    @classmethod
    def constant(cls, mean: float) -> "LatencyProfile":
        return cls(CONSTANT, mean=mean)

    @classmethod
    def gaussian(cls, mean: float, stddev: float, floor: float = 0.001, seed: int = 0) -> "LatencyProfile":
        return cls(GAUSSIAN, mean=mean, stddev=stddev, floor=floor, seed=seed)

    @classmethod
    def replay(cls, values) -> "LatencyProfile":
        return cls(REPLAY, replay_values=tuple(values))

    def sampler(self, seed: int | None = None) -> "LatencySampler":
        """Fresh per-run sampler; `seed` overrides the profile's own."""
        return LatencySampler(self, self.seed if seed is None else seed)


class LatencySampler:
    def __init__(self, profile: LatencyProfile, seed: int):
        self._profile = profile
        self._rng = np.random.default_rng(seed) if profile.kind == GAUSSIAN else None
        self._pos = 0

    def draw(self) -> float:
        p = self._profile
        if p.kind == CONSTANT:
            return p.mean
        if p.kind == GAUSSIAN:
            return max(p.floor, float(self._rng.normal(p.mean, p.stddev)))
        if self._pos >= len(p.replay_values):
            raise ReplayExhaustedError(
                f"replay latency exhausted after {self._pos} draws"
            )
        value = p.replay_values[self._pos]
        self._pos += 1
        return value
