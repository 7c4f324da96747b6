"""Latency-aware evaluation: match each frame's wall-clock deadline to
the newest available output, score center error and overlap, and sweep
the permitted-latency grid.

The permitted latency sigma is dimensionless, a fraction of one frame
period; the slack added to frame f's deadline is sigma / kappa seconds.
sigma = 0 scores the stream strictly online; sigma -> 1 approaches (but
never reaches) a one-frame grace period.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .boxes import RAW, BoundingBox, Sequence, center_error, iou
from .errors import ValidationError
from .simulate import RunLog

INITIAL_B0 = "initial_b0"

DP_THRESHOLD_PX = 20.0
IOU_THRESHOLDS = tuple((np.arange(21) / 20.0).tolist())

_GRID = tuple((np.arange(50) * 0.02).tolist())


def sigma_grid() -> tuple:
    """The 50-point evaluation grid {0, 0.02, ..., 0.98}."""
    return _GRID


@dataclass(frozen=True, slots=True)
class PermittedLatency:
    sigma: float

    def __post_init__(self):
        if not 0.0 <= self.sigma < 1.0:
            raise ValidationError(f"sigma must be in [0, 1), got {self.sigma}")

    def slack_seconds(self, kappa: float) -> float:
        return self.sigma / kappa


@dataclass(frozen=True, slots=True)
class MatchedEstimate:
    frame: int
    estimate: BoundingBox
    source: str  # raw | predicted | initial_b0


def _as_sigma(sigma) -> PermittedLatency:
    if isinstance(sigma, PermittedLatency):
        return sigma
    return PermittedLatency(float(sigma))


class EstimateMatcher:
    """Deadline matcher over one run log, built once and queried per
    (frame, sigma) pair.

    Outputs are bucketed by availability instant. A query takes the
    newest instant not after the deadline, then within that bucket the
    entry with the largest target frame <= f, else the largest target
    frame outright; ties go to the latest entry in log order. No bucket
    in time means the initial box."""

    def __init__(self, seq: Sequence, log: RunLog):
        for out in log.outputs:
            if out.kind == RAW and out.target_frame > seq.last_frame:
                raise ValidationError(
                    f"log targets frame {out.target_frame} beyond sequence end {seq.last_frame}"
                )
        self._seq = seq
        order = sorted(range(len(log.outputs)),
                       key=lambda i: (log.outputs[i].available_at, i))
        self._avail = []
        self._groups = []
        self._group_targets = []
        for i in order:
            out = log.outputs[i]
            if not self._avail or out.available_at != self._avail[-1]:
                self._avail.append(out.available_at)
                self._groups.append([])
            self._groups[-1].append((out.target_frame, i, out))
        for group in self._groups:
            group.sort(key=lambda entry: entry[:2])
            self._group_targets.append([entry[0] for entry in group])

    def match(self, f: int, sigma) -> MatchedEstimate:
        if not 0 <= f <= self._seq.last_frame:
            raise ValidationError(f"frame {f} outside sequence 0..{self._seq.last_frame}")
        deadline = self._seq.clock.capture_time(f) + _as_sigma(sigma).slack_seconds(
            self._seq.clock.framerate_kappa)
        gi = bisect_right(self._avail, deadline) - 1
        if gi < 0:
            return MatchedEstimate(f, self._seq.b0, INITIAL_B0)
        pos = bisect_right(self._group_targets[gi], f) - 1
        out = self._groups[gi][pos][2]
        return MatchedEstimate(f, out.box, out.kind)


def match_elae(seq: Sequence, log: RunLog, f: int, sigma) -> MatchedEstimate:
    """Extended latency-aware match: slack of sigma frame periods."""
    return EstimateMatcher(seq, log).match(f, sigma)


def match_lae(seq: Sequence, log: RunLog, f: int) -> MatchedEstimate:
    """Strictly online match: the newest output available by capture."""
    return match_elae(seq, log, f, 0.0)


def _score_matched(seq: Sequence, matcher: EstimateMatcher, sigma) -> tuple:
    cle_hits = 0
    ious = []
    annotated = 0
    for f, gt in enumerate(seq.ground_truth):
        if gt is None:
            continue
        annotated += 1
        est = matcher.match(f, sigma).estimate
        if center_error(gt, est) <= DP_THRESHOLD_PX:
            cle_hits += 1
        ious.append(iou(gt, est))
    arr = np.asarray(ious)
    dp = cle_hits / annotated
    auc = float(np.mean([(arr > tau).mean() for tau in IOU_THRESHOLDS]))
    return dp, auc


def score_run(seq: Sequence, log: RunLog, sigma) -> tuple:
    """(DP, AUC) of the log against the sequence at one permitted
    latency. Frames without an annotation are excluded from both."""
    return _score_matched(seq, EstimateMatcher(seq, log), sigma)


@dataclass(frozen=True)
class EvalCurve:
    sigma_grid: tuple
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "sigma_grid", tuple(self.sigma_grid))
        object.__setattr__(self, "values", tuple(self.values))
        if self.sigma_grid != _GRID:
            raise ValidationError("curve must use the canonical 50-point sigma grid")
        if len(self.values) != len(self.sigma_grid):
            raise ValidationError("one value per grid point required")
        if any(not 0.0 <= v <= 1.0 for v in self.values):
            raise ValidationError("curve values must lie in [0, 1]")

    @classmethod
    def from_values(cls, values) -> "EvalCurve":
        return cls(_GRID, tuple(values))

    @property
    def aggregate(self) -> float:
        return float(np.mean(self.values))


def sweep(seq_set, logs) -> tuple:
    """Score every sequence at every grid sigma; returns the AUC curve
    and the DP curve, each averaged uniformly across sequences."""
    seq_set = list(seq_set)
    logs = list(logs)
    if not seq_set:
        raise ValidationError("sweep needs at least one sequence")
    if len(seq_set) != len(logs):
        raise ValidationError(f"{len(seq_set)} sequences but {len(logs)} logs")
    matchers = [EstimateMatcher(seq, log) for seq, log in zip(seq_set, logs)]
    auc_values = []
    dp_values = []
    for sigma in _GRID:
        dps = []
        aucs = []
        for seq, matcher in zip(seq_set, matchers):
            dp, auc = _score_matched(seq, matcher, sigma)
            dps.append(dp)
            aucs.append(auc)
        dp_values.append(float(np.mean(dps)))
        auc_values.append(float(np.mean(aucs)))
    return EvalCurve.from_values(auc_values), EvalCurve.from_values(dp_values)
