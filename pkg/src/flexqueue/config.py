"""Plain-text run configuration: one ``key = value`` per line, dotted keys, ``#`` comments.

Example::

    lambda = 5
    mu_low = 3
    mu_high = 5
    c = 6
    R = 4
    beta = 0.5
    holding.variant = power
    holding.K = 1
    holding.m = 2
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from flexqueue.errors import ConfigError, ModelError
from flexqueue.model import (
    ExponentialCost,
    ModelParams,
    PowerCost,
    RewardTiming,
    TabularCost,
    TruncationSpec,
)

MODEL_KEYS = ("lambda", "mu_low", "mu_high", "c", "R", "beta")

KNOWN_KEYS = frozenset(
    MODEL_KEYS
    + (
        "reward_timing",
        "holding.variant",
        "holding.K",
        "holding.m",
        "holding.rho",
        "holding.values",
        "truncation.x_max",
        "truncation.safety_margin",
        "truncation.adaptive",
        "truncation.max_x_max",
        "solver.tol",
        "solver.max_iters",
        "solver.method",
        "sweep.axis",
        "sweep.values",
        "critical.R_min",
        "critical.R_max",
        "critical.resolution",
        "critical.bisect_tol",
        "average.beta0",
        "average.shrink",
        "average.stop_tol",
        "average.max_stages",
        "average.spread_tol",
        "sim.seed",
        "sim.replications",
        "sim.mode",
        "sim.epsilon_tail",
        "sim.T",
        "sim.warmup",
        "sim.batches",
        "sim.x0",
        "sim.i0",
        "sim.b_service",
        "sim.b_admission",
        "sim.trace_T",
        "reproduce.horizon",
    )
)

_MISSING = object()


@dataclass
class Config:
    """Raw entries with their source line (None for command-line overrides)."""

    entries: dict[str, tuple[str, int | None]] = field(default_factory=dict)

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def set(self, key: str, value: str, line: int | None = None):
        if key not in KNOWN_KEYS:
            raise ConfigError("unknown key", line, key)
        self.entries[key] = (value, line)

    def _raw(self, key: str, default):
        if key in self.entries:
            return self.entries[key]
        if default is _MISSING:
            raise ConfigError("missing required key", None, key)
        return None

    def _convert(self, key, default, conv, what):
        raw = self._raw(key, default)
        if raw is None:
            return default
        text, line = raw
        try:
            return conv(text)
        except (TypeError, ValueError):
            raise ConfigError(f"expected {what}, got {text!r}", line, key) from None

    def float(self, key: str, default=_MISSING) -> float:
        return self._convert(key, default, float, "a number")

    def int(self, key: str, default=_MISSING) -> int:
        return self._convert(key, default, int, "an integer")

    def str(self, key: str, default=_MISSING) -> str:
        return self._convert(key, default, str, "a string")

    def bool(self, key: str, default=_MISSING) -> bool:
        def conv(t: str) -> bool:
            low = t.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(t)

        return self._convert(key, default, conv, "true or false")

    def floats(self, key: str, default=_MISSING) -> list[float]:
        def conv(t: str) -> list[float]:
            return [float(p) for p in t.split(",") if p.strip()]

        return self._convert(key, default, conv, "a comma-separated list of numbers")

    def threshold(self, key: str, default=_MISSING) -> float:
        def conv(t: str) -> float:
            if t.strip().lower() in ("inf", "+inf", "infinity"):
                return float("inf")
            return int(t)

        return self._convert(key, default, conv, "an integer or inf")

    def line_of(self, key: str) -> int | None:
        return self.entries[key][1] if key in self.entries else None

    def resolved(self) -> dict[str, str]:
        return {k: v for k, (v, _) in sorted(self.entries.items())}


def parse_config(text: str) -> Config:
    cfg = Config()
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", n)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", n)
        if key in cfg:
            raise ConfigError(f"duplicate key (first set on line {cfg.line_of(key)})", n, key)
        cfg.set(key, value, n)
    return cfg


def load_config(path: str | Path | None, overrides=()) -> Config:
    """Read ``path`` (if any) and apply ``key=value`` overrides on top."""
    if path is None:
        cfg = Config()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
        cfg = parse_config(text)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = (p.strip() for p in item.split("=", 1))
        cfg.set(key, value)
    return cfg


def holding_from(cfg: Config):
    variant = cfg.str("holding.variant", "power").lower()
    try:
        if variant == "power":
            return PowerCost(cfg.float("holding.K", 1.0), cfg.float("holding.m", 2.0))
        if variant == "exponential":
            return ExponentialCost(cfg.float("holding.K", 1.0), cfg.float("holding.rho"))
        if variant == "tabular":
            return TabularCost(tuple(cfg.floats("holding.values")))
    except ModelError as exc:
        raise ConfigError(str(exc), cfg.line_of("holding.variant"), "holding") from None
    raise ConfigError("expected power, exponential or tabular", cfg.line_of("holding.variant"), "holding.variant")


def model_from(cfg: Config) -> ModelParams:
    vals = {k: cfg.float(k) for k in MODEL_KEYS}
    timing_text = cfg.str("reward_timing", "admission").lower()
    try:
        timing = RewardTiming(timing_text)
    except ValueError:
        raise ConfigError("expected admission or departure", cfg.line_of("reward_timing"), "reward_timing") from None
    try:
        return ModelParams(
            lam=vals["lambda"],
            mu_low=vals["mu_low"],
            mu_high=vals["mu_high"],
            c=vals["c"],
            R=vals["R"],
            beta=vals["beta"],
            holding=holding_from(cfg),
            reward_timing=timing,
        )
    except ModelError as exc:
        raise ConfigError(str(exc)) from None


def truncation_from(cfg: Config, x_max: int | None = None) -> TruncationSpec:
    base = TruncationSpec()
    try:
        return TruncationSpec(
            x_max=x_max if x_max is not None else cfg.int("truncation.x_max", base.x_max),
            safety_margin=cfg.int("truncation.safety_margin", base.safety_margin),
            adaptive=cfg.bool("truncation.adaptive", base.adaptive),
            max_x_max=cfg.int("truncation.max_x_max", base.max_x_max),
        )
    except ModelError as exc:
        raise ConfigError(str(exc), key="truncation") from None
