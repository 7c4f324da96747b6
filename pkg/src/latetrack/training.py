"""Training for the motion network: AdamW, window sampling over
trajectories, the epoch loop, synthetic trajectory generation, and a
motion-space L1 harness for comparing predictors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boxes import BoundingBox, FrameClock, Sequence
from .errors import DivergenceError, ValidationError
from .motion import MotionHistory, average_speed, encode_motion
from .network import (PMWeights, backward_batch, forward_batch, history_input,
                      init_weights)
from .seeding import derive_seed, rng_for

_EPS = 1e-8


@dataclass(frozen=True, slots=True)
class OptimizerConfig:
    lr: float = 0.03
    betas: tuple = (0.9, 0.999)
    weight_decay: float = 0.01
    epochs: int = 100
    milestones: tuple = (30, 80)
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        b1, b2 = self.betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise ValidationError(f"betas must be in [0, 1), got {self.betas}")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be >= 0")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        ms = tuple(sorted(int(m) for m in self.milestones))
        if ms and ms[0] < 1:
            raise ValidationError(f"milestones must be >= 1, got {self.milestones}")
        if ms and ms[-1] >= self.epochs:
            raise ValidationError(
                f"milestones {ms} must all fall before the last of {self.epochs} epochs"
            )
        object.__setattr__(self, "milestones", ms)

    def lr_at(self, epoch: int) -> float:
        """Step schedule: lr drops by 10x at each milestone epoch
        (1-indexed), staying dropped from the milestone on."""
        drops = sum(1 for m in self.milestones if m <= epoch)
        return self.lr * 0.1 ** drops


class AdamW:
    """Decoupled-weight-decay Adam over a dict of named arrays, updated
    in place. One first/second moment pair per name; the step counter is
    shared so bias correction matches a single-parameter-group run."""

    def __init__(self, config: OptimizerConfig):
        self.config = config
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self, params: dict, grads: dict, epoch: int) -> None:
        if set(params) != set(grads):
            raise ValidationError("params and grads must share keys")
        self.t += 1
        lr = self.config.lr_at(epoch)
        b1, b2 = self.config.betas
        wd = self.config.weight_decay
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValidationError(f"grad shape {g.shape} != param shape {p.shape} for {name!r}")
            if name not in self._m:
                self._m[name] = np.zeros_like(p)
                self._v[name] = np.zeros_like(p)
            m = self._m[name]
            v = self._v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * ((m / bc1) / (np.sqrt(v / bc2) + _EPS) + wd * p)


@dataclass(frozen=True)
class TrainSample:
    """One supervised window: a motion history ending at latest_box,
    plus the true normalized motions from that anchor frame to each of
    the next N frames."""

    history: MotionHistory
    latest_box: BoundingBox
    targets: tuple

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if not self.targets:
            raise ValidationError("sample needs at least one target")


def sample_windows(traj, k: int, horizon_n: int, stride_set, rng) -> list:
    """Windows over one trajectory: every anchor with room for a full
    stride-k history and N future frames, with the k history intervals
    drawn uniformly from stride_set."""
    strides = sorted(set(int(s) for s in stride_set))
    if not strides or strides[0] < 1:
        raise ValidationError(f"stride_set must hold integers >= 1, got {stride_set!r}")
    if k < 1 or horizon_n < 1:
        raise ValidationError("k and horizon must be >= 1")
    need = k * strides[-1] + horizon_n + 1
    if len(traj) < need:
        raise ValidationError(f"trajectory of {len(traj)} frames is shorter than {need}")
    samples = []
    for anchor in range(k * strides[-1], len(traj) - horizon_n):
        picks = rng.integers(0, len(strides), size=k)
        frames = [anchor]
        for idx in picks:
            frames.append(frames[-1] - strides[idx])
        frames.reverse()
        motions = []
        intervals = []
        for prev, cur in zip(frames, frames[1:]):
            motions.append(encode_motion(traj[prev], traj[cur]))
            intervals.append(cur - prev)
        targets = tuple(encode_motion(traj[anchor], traj[anchor + n])
                        for n in range(1, horizon_n + 1))
        samples.append(TrainSample(MotionHistory(tuple(motions), tuple(intervals)),
                                   traj[anchor], targets))
    return samples


def _sample_arrays(samples, k: int, horizon_n: int):
    xs = np.empty((len(samples), k, 8))
    targets = np.empty((len(samples), horizon_n, 4))
    speeds = np.empty((len(samples), 4))
    for i, s in enumerate(samples):
        if s.history.k != k or len(s.targets) != horizon_n:
            raise ValidationError("sample window sizes disagree with the model")
        xs[i] = history_input(s.history)
        targets[i] = [t.as_tuple() for t in s.targets]
        speeds[i] = average_speed(s.history).as_tuple()
    return xs, targets, speeds


def _batch_l1(weights, xs, targets, speeds):
    factors, cache = forward_batch(weights, xs, keep_cache=True)
    pred = factors * speeds[:, None, :]
    diff = pred - targets
    loss = float(np.abs(diff).mean())
    grad_fac = np.sign(diff) * speeds[:, None, :] / diff.size
    return loss, grad_fac, cache


def _mean_l1(weights, xs, targets, speeds, batch: int = 512) -> float:
    if len(xs) == 0:
        return 0.0
    total = 0.0
    for lo in range(0, len(xs), batch):
        factors, _ = forward_batch(weights, xs[lo:lo + batch])
        pred = factors * speeds[lo:lo + batch, None, :]
        total += float(np.abs(pred - targets[lo:lo + batch]).sum())
    return total / targets.size


def train_pm(samples_per_track, k: int, horizon_n: int, config: OptimizerConfig,
             *, c_enc: int = 64, c_dec: int = 32):
    """Train the motion network on windows grouped per trajectory.

    Trajectories (not windows) are split 90/10 into train/validation so
    validation frames never leak into training. Returns the weights with
    the best validation L1 seen (initialization included) and the
    per-epoch loss history as (epoch, train_l1, val_l1) rows.
    """
    groups = [list(g) for g in samples_per_track if g]
    if not groups:
        raise ValidationError("no training windows")
    order = rng_for(config.seed, "pm-split").permutation(len(groups))
    n_val = max(1, round(0.1 * len(groups))) if len(groups) >= 2 else 0
    val_samples = [s for i in order[:n_val] for s in groups[i]]
    train_samples = [s for i in order[n_val:] for s in groups[i]]
    if not val_samples:
        val_samples = train_samples

    xs, targets, speeds = _sample_arrays(train_samples, k, horizon_n)
    vxs, vtargets, vspeeds = _sample_arrays(val_samples, k, horizon_n)

    weights = init_weights(k, horizon_n, c_enc=c_enc, c_dec=c_dec,
                           seed=derive_seed(config.seed, "pm-init"))
    opt = AdamW(config)
    best = weights.copy()
    best_val = _mean_l1(weights, vxs, vtargets, vspeeds)
    history = []
    n = len(train_samples)
    for epoch in range(1, config.epochs + 1):
        perm = rng_for(config.seed, "pm-epoch", epoch).permutation(n)
        epoch_loss = 0.0
        for lo in range(0, n, config.batch_size):
            idx = perm[lo:lo + config.batch_size]
            loss, grad_fac, cache = _batch_l1(weights, xs[idx], targets[idx], speeds[idx])
            if not math.isfinite(loss):
                raise DivergenceError(f"training loss became {loss} at epoch {epoch}")
            grads = backward_batch(weights, cache, grad_fac)
            opt.step(weights.params(), grads, epoch=epoch)
            epoch_loss += loss * len(idx)
        val = _mean_l1(weights, vxs, vtargets, vspeeds)
        if not math.isfinite(val):
            raise DivergenceError(f"validation loss became {val} at epoch {epoch}")
        history.append((epoch, epoch_loss / n, val))
        if val < best_val:
            best_val = val
            best = weights.copy()
    return best, history


# ---------------------------------------------------------------------------
# Synthetic trajectories

CONSTANT_VELOCITY = "constant_velocity"
CONSTANT_ACCELERATION = "constant_acceleration"
SINUSOIDAL = "sinusoidal"
RANDOM_WALK = "random_walk"
SYNTH_KINDS = (CONSTANT_VELOCITY, CONSTANT_ACCELERATION, SINUSOIDAL, RANDOM_WALK)


@dataclass(frozen=True, slots=True)
class SyntheticSpec:
    kind: str
    n_sequences: int
    length: int
    seed: int = 0
    framerate_kappa: float = 30.0
    center_range: tuple = (120.0, 400.0)
    size_range: tuple = (40.0, 70.0)
    speed_range: tuple = (1.0, 4.0)
    accel_range: tuple = (0.02, 0.12)
    amplitude_range: tuple = (15.0, 35.0)
    period_range: tuple = (18.0, 40.0)
    walk_step: float = 2.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.kind not in SYNTH_KINDS:
            raise ValidationError(f"unknown trajectory kind {self.kind!r}")
        if self.n_sequences < 1 or self.length < 2:
            raise ValidationError("need n_sequences >= 1 and length >= 2")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")


def linear_track(b0: BoundingBox, velocity, length: int) -> list:
    """Constant-velocity trajectory: the box translates by `velocity`
    pixels per frame at fixed size."""
    vx, vy = velocity
    return [BoundingBox(b0.x + vx * t, b0.y + vy * t, b0.w, b0.h) for t in range(length)]


def _signed_uniform(rng, lo, hi):
    return (1 if rng.random() < 0.5 else -1) * rng.uniform(lo, hi)


def _centers(spec: SyntheticSpec, rng):
    t = np.arange(spec.length, dtype=float)
    c0 = rng.uniform(*spec.center_range, size=2)
    if spec.kind == CONSTANT_VELOCITY:
        v = np.array([_signed_uniform(rng, *spec.speed_range) for _ in range(2)])
        return c0[None, :] + t[:, None] * v[None, :]
    if spec.kind == CONSTANT_ACCELERATION:
        v = np.array([_signed_uniform(rng, *spec.speed_range) for _ in range(2)])
        a = np.array([_signed_uniform(rng, *spec.accel_range) for _ in range(2)])
        return c0[None, :] + t[:, None] * v[None, :] + 0.5 * t[:, None] ** 2 * a[None, :]
    if spec.kind == SINUSOIDAL:
        amp = rng.uniform(*spec.amplitude_range, size=2)
        period = rng.uniform(*spec.period_range, size=2)
        phase = rng.uniform(0.0, 2.0 * math.pi, size=2)
        return c0[None, :] + amp[None, :] * np.sin(2.0 * math.pi * t[:, None] / period[None, :]
                                                   + phase[None, :])
    steps = rng.normal(0.0, spec.walk_step, size=(spec.length - 1, 2))
    return np.vstack([c0, c0 + np.cumsum(steps, axis=0)])


def gen_synthetic(spec: SyntheticSpec) -> list:
    """Deterministic family of synthetic sequences; each sequence's
    randomness is derived from (seed, kind, index) so regenerating any
    subset reproduces the same tracks."""
    clock = FrameClock(spec.framerate_kappa)
    sequences = []
    for i in range(spec.n_sequences):
        rng = rng_for(spec.seed, "synthetic", spec.kind, i)
        centers = _centers(spec, rng)
        w, h = rng.uniform(*spec.size_range, size=2)
        if spec.noise_sigma > 0:
            centers = centers + rng.normal(0.0, spec.noise_sigma, size=centers.shape)
        boxes = tuple(BoundingBox.from_center(cx, cy, w, h) for cx, cy in centers)
        sequences.append(Sequence(f"{spec.kind}-{i:03d}", clock, boxes))
    return sequences


def motion_l1_on_samples(samples, predict_batch) -> float:
    """Mean motion-space L1 error of a predictor over supervised windows.

    predict_batch maps a list of TrainSamples to an (n, N, 4) array of
    predicted normalized motions from each window's anchor. Comparing
    predictors through this harness keeps them honest: every predictor
    sees the identical windows, boxes, and frame gaps.
    """
    samples = list(samples)
    if not samples:
        raise ValidationError("no evaluation windows")
    pred = np.asarray(predict_batch(samples), dtype=float)
    targets = np.array([[t.as_tuple() for t in s.targets] for s in samples])
    if pred.shape != targets.shape:
        raise ValidationError(
            f"predictions shaped {pred.shape} do not match targets {targets.shape}"
        )
    return float(np.abs(pred - targets).mean())


def pm_motion_batch(weights):
    """Window predictor wrapping trained motion-factor weights."""
    def predict(samples):
        xs = np.stack([history_input(s.history) for s in samples])
        speeds = np.array([average_speed(s.history).as_tuple() for s in samples])
        factors, _ = forward_batch(weights, xs)
        return factors * speeds[:, None, :]
    return predict


def zero_motion_batch(horizon_n: int):
    """Window predictor for the stay-put baseline: all-zero motions."""
    def predict(samples):
        return np.zeros((len(samples), horizon_n, 4))
    return predict
