"""Key-value config files for the CLI.

Format: one `key = value` per line, `#` comments, blank lines ignored.
Dotted keys group related settings (latency.kind, latency.mean). Values
are plain strings until a typed getter parses them; comma-separated
lists are allowed where a ranged or tuple value is expected.
"""

from __future__ import annotations

from pathlib import Path

from .errors import ValidationError
from .latency import LatencyProfile
from .network import load_weights
from .training import SyntheticSpec


class Config:
    """Parsed key-value file with typed access; unknown keys are left
    alone so callers can own their own namespaces."""

    def __init__(self, values: dict, source: str = "<config>"):
        self.values = dict(values)
        self.source = source

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "Config":
        values = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValidationError(f"{source}:{lineno}: expected key = value, got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not key:
                raise ValidationError(f"{source}:{lineno}: empty key")
            if key in values:
                raise ValidationError(f"{source}:{lineno}: duplicate key {key!r}")
            values[key] = value
        return cls(values, source)

    @classmethod
    def load(cls, path) -> "Config":
        path = Path(path)
        return cls.from_text(path.read_text(), str(path))

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def has_group(self, prefix: str) -> bool:
        return any(k.startswith(prefix) for k in self.values)

    def get_str(self, key: str, default=None) -> str:
        if key in self.values:
            return self.values[key]
        if default is None:
            raise ValidationError(f"{self.source}: missing required key {key!r}")
        return default

    def _parse(self, key: str, kind, text: str):
        try:
            return kind(text)
        except ValueError:
            raise ValidationError(
                f"{self.source}: key {key!r} needs a {kind.__name__}, got {text!r}") from None

    def get_int(self, key: str, default=None) -> int:
        if key not in self.values:
            if default is None:
                raise ValidationError(f"{self.source}: missing required key {key!r}")
            return default
        return self._parse(key, int, self.values[key])

    def get_float(self, key: str, default=None) -> float:
        if key not in self.values:
            if default is None:
                raise ValidationError(f"{self.source}: missing required key {key!r}")
            return default
        return self._parse(key, float, self.values[key])

    def get_floats(self, key: str, default=None) -> tuple:
        if key not in self.values:
            if default is None:
                raise ValidationError(f"{self.source}: missing required key {key!r}")
            return tuple(default)
        return tuple(self._parse(key, float, part) for part in self.values[key].split(","))

    def get_ints(self, key: str, default=None) -> tuple:
        if key not in self.values:
            if default is None:
                raise ValidationError(f"{self.source}: missing required key {key!r}")
            return tuple(default)
        return tuple(self._parse(key, int, part) for part in self.values[key].split(","))


def latency_from_config(cfg: Config, prefix: str = "latency.") -> LatencyProfile:
    kind = cfg.get_str(prefix + "kind")
    if kind == "constant":
        return LatencyProfile.constant(cfg.get_float(prefix + "mean"))
    if kind in ("gaussian", "gaussian_truncated"):
        return LatencyProfile.gaussian(
            cfg.get_float(prefix + "mean"),
            cfg.get_float(prefix + "stddev"),
            floor=cfg.get_float(prefix + "floor", 0.001),
            seed=cfg.get_int(prefix + "seed", 0),
        )
    if kind == "replay":
        path = Path(cfg.get_str(prefix + "file"))
        try:
            values = [float(ln) for ln in path.read_text().split()]
        except ValueError:
            raise ValidationError(f"{path}: replay latency file must hold one number per line") from None
        return LatencyProfile.replay(values)
    raise ValidationError(f"{cfg.source}: unknown latency kind {kind!r}")


def synthetic_spec_from_config(cfg: Config, seed_override=None) -> SyntheticSpec:
    if "length" in cfg and "duration" in cfg:
        raise ValidationError(f"{cfg.source}: give either length or duration, not both")
    length = cfg.get_int("length", 0) or cfg.get_int("duration", 0)
    if length == 0:
        raise ValidationError(f"{cfg.source}: missing required key 'length'")
    seed = cfg.get_int("seed", 0) if seed_override is None else seed_override
    return SyntheticSpec(
        kind=cfg.get_str("kind"),
        n_sequences=cfg.get_int("count"),
        length=length,
        seed=seed,
        framerate_kappa=cfg.get_float("framerate", 30.0),
        center_range=cfg.get_floats("center_range", (120.0, 400.0)),
        size_range=cfg.get_floats("size_range", (40.0, 70.0)),
        speed_range=cfg.get_floats("speed_range", (1.0, 4.0)),
        accel_range=cfg.get_floats("accel_range", (0.02, 0.12)),
        amplitude_range=cfg.get_floats("amplitude_range", (15.0, 35.0)),
        period_range=cfg.get_floats("period_range", (18.0, 40.0)),
        walk_step=cfg.get_float("walk_step", 2.0),
        noise_sigma=cfg.get_float("noise_sigma", 0.0),
    )


def tracker_from_config(cfg: Config):
    """Tracker settings; replay trackers defer box/latency resolution to
    the caller because traces are chosen per sequence."""
    from .simulate import ORACLE_NOISY, REPLAY_LOG, TrackerAdapter

    behavior = cfg.get_str("behavior", ORACLE_NOISY)
    if behavior == ORACLE_NOISY:
        return TrackerAdapter.oracle_noisy(
            latency_from_config(cfg),
            sigma_pos=cfg.get_float("sigma_pos", 0.0),
            sigma_scale=cfg.get_float("sigma_scale", 0.0),
            seed=cfg.get_int("seed", 0),
        )
    if behavior == REPLAY_LOG:
        return ReplayTrackerConfig(
            trace=Path(cfg.get_str("trace")),
            latency=latency_from_config(cfg) if cfg.has_group("latency.") else None,
        )
    raise ValidationError(f"{cfg.source}: unknown tracker behavior {behavior!r}")


class ReplayTrackerConfig:
    """Replay tracker before its trace is bound to a sequence. `trace`
    is a trace CSV or a directory of <name>.trace.csv files; without an
    explicit latency profile the recorded durations are replayed."""

    def __init__(self, trace: Path, latency=None):
        self.trace = trace
        self.latency = latency

    def bind(self, seq_name: str):
        from .simulate import TrackerAdapter, load_trace, replay_adapter_from_trace

        path = self.trace / f"{seq_name}.trace.csv" if self.trace.is_dir() else self.trace
        rows = load_trace(path)
        if self.latency is None:
            return replay_adapter_from_trace(rows)
        boxes = {frame: box for frame, _, _, box in rows}
        return TrackerAdapter.replay(boxes, self.latency)


def predictor_from_config(cfg: Config, default_horizon: int = 2):
    from .simulate import KF_LEARNED, NEURAL_PM, PredictorAdapter

    kind = cfg.get_str("kind")
    if kind == "pm":
        kind = NEURAL_PM
    horizon = cfg.get_int("horizon", default_horizon)
    latency = (latency_from_config(cfg) if cfg.has_group("latency.")
               else LatencyProfile.constant(0.005))
    q_diag = ()
    r_diag = ()
    weights = None
    if kind == KF_LEARNED:
        from .predictors import load_kf_noise

        q_diag, r_diag = load_kf_noise(cfg.get_str("noise"))
    if kind == NEURAL_PM:
        weights = load_weights(cfg.get_str("weights"))
        horizon = cfg.get_int("horizon", weights.n_heads)
    return PredictorAdapter(kind, horizon, latency, q_diag=q_diag, r_diag=r_diag,
                            weights=weights)
