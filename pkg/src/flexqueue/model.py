"""Problem instance, holding-cost families and the uniformized discrete model.

All rates are kept in their original time units. The discrete-time model
divides every rate and cost rate by ``Lambda + beta`` where
``Lambda = lambda + mu_high`` is the largest total transition rate, so the
per-transition discount factor is ``Lambda / (Lambda + beta)``.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass, field

import numpy as np

from flexqueue.errors import AssumptionViolated, ModelError, NonConvexCost, TabularOutOfRange


class RewardTiming(enum.Enum):
    AT_ADMISSION = "admission"
    AT_DEPARTURE = "departure"


# Holding-cost families. Each is immutable and hashable so solver results can be cached.


@dataclass(frozen=True)
class PowerCost:
    """h(x) = K * x**m."""

    K: float = 1.0
    m: float = 2.0

    def __post_init__(self):
        if not self.K > 0:
            raise ModelError(f"power cost needs K > 0, got {self.K}")
        if not self.m >= 1:
            raise ModelError(f"power cost needs m >= 1, got {self.m}")

    def array(self, x_max: int) -> np.ndarray:
        x = np.arange(x_max + 1, dtype=float)
        return self.K * x**self.m

    def describe(self) -> dict[str, object]:
        return {"holding.variant": "power", "holding.K": self.K, "holding.m": self.m}


@dataclass(frozen=True)
class ExponentialCost:
    """h(x) = K * (rho**x - 1).

    The offset keeps h(0) = 0 while leaving growth and convexity of
    K * rho**x untouched.
    """

    K: float = 1.0
    rho: float = 1.05

    def __post_init__(self):
        if not self.K > 0:
            raise ModelError(f"exponential cost needs K > 0, got {self.K}")
        if not self.rho > 1:
            raise ModelError(f"exponential cost needs rho > 1, got {self.rho}")

    def array(self, x_max: int) -> np.ndarray:
        x = np.arange(x_max + 1, dtype=float)
        return self.K * np.expm1(x * math.log(self.rho))

    def describe(self) -> dict[str, object]:
        return {"holding.variant": "exponential", "holding.K": self.K, "holding.rho": self.rho}


@dataclass(frozen=True)
class TabularCost:
    """User-supplied h(0), h(1), ..., linearly extrapolated past the last entry."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if len(vals) < 2:
            raise ModelError("tabular cost needs at least h(0) and h(1)")
        if vals[0] != 0.0:
            raise ModelError(f"tabular cost needs h(0) = 0, got {vals[0]}")
        steps = np.diff(vals)
        if not steps[0] > 0:
            raise ModelError("tabular cost must be increasing (h(1) > h(0) = 0)")
        # tolerate roundoff so that e.g. an evenly spaced decimal table counts as linear
        slack = 1e-12 * max(1.0, float(np.max(np.abs(vals))))
        bad = np.nonzero(np.diff(steps) < -slack)[0]
        if bad.size:
            x = int(bad[0]) + 1
            raise NonConvexCost(f"tabular cost not convex at x={x}")

    @property
    def last_index(self) -> int:
        return len(self.values) - 1

    def array(self, x_max: int, extrapolate: bool = True) -> np.ndarray:
        n = len(self.values)
        if x_max < n:
            return np.array(self.values[: x_max + 1])
        if not extrapolate:
            raise TabularOutOfRange(f"tabular cost defined up to x={n - 1}, requested x={x_max}")
        slope = self.values[-1] - self.values[-2]
        tail = self.values[-1] + slope * np.arange(1, x_max - n + 2)
        return np.concatenate([self.values, tail])

    def describe(self) -> dict[str, object]:
        return {"holding.variant": "tabular", "holding.values": ", ".join(f"{v:g}" for v in self.values)}


HoldingCostSpec = PowerCost | ExponentialCost | TabularCost


def holding_cost(spec: HoldingCostSpec, x: int, extrapolate: bool = False) -> float:
    """Holding cost rate h(x) for a single queue length."""
    if x < 0:
        raise ValueError(f"queue length must be nonnegative, got {x}")
    if isinstance(spec, TabularCost):
        return float(spec.array(x, extrapolate=extrapolate)[x])
    return float(spec.array(x)[x])


@dataclass(frozen=True)
class ModelParams:
    """Joint admission / two-speed service M/M/1 instance.

    ``c`` is the extra cost rate of the high speed (the low-speed cost is
    normalized to zero), ``R`` the reward per admitted (or, with
    ``AT_DEPARTURE``, per served) customer and ``beta`` the continuous
    discount rate.
    """

    lam: float
    mu_low: float
    mu_high: float
    c: float
    R: float
    beta: float
    holding: HoldingCostSpec = field(default_factory=PowerCost)
    reward_timing: RewardTiming = RewardTiming.AT_ADMISSION

    def __post_init__(self):
        if not self.lam > 0:
            raise ModelError(f"arrival rate must be positive, got {self.lam}")
        if not self.mu_low > 0:
            raise ModelError(f"mu_low must be positive, got {self.mu_low}")
        if not self.mu_high > self.mu_low:
            raise ModelError(f"mu_high must exceed mu_low, got {self.mu_high} <= {self.mu_low}")
        if not self.c >= 0:
            raise ModelError(f"service overhead c must be nonnegative, got {self.c}")
        if not self.R >= 0:
            raise ModelError(f"reward R must be nonnegative, got {self.R}")
        if not self.beta > 0:
            raise ModelError(f"discount rate beta must be positive, got {self.beta}")
        if not all(math.isfinite(v) for v in (self.lam, self.mu_low, self.mu_high, self.c, self.R, self.beta)):
            raise ModelError("model parameters must be finite")

    @property
    def delta(self) -> float:
        return self.mu_high - self.mu_low

    @property
    def max_rate(self) -> float:
        """Uniformization constant Lambda = lambda + mu_high."""
        return self.lam + self.mu_high

    @property
    def c_over_delta(self) -> float:
        return self.c / self.delta

    def replace(self, **changes) -> ModelParams:
        """Copy with some fields changed; ``lambda`` is accepted as an alias of ``lam``."""
        if "lambda" in changes:
            changes["lam"] = changes.pop("lambda")
        kwargs = {f: getattr(self, f) for f in self.__dataclass_fields__}
        kwargs.update(changes)
        return ModelParams(**kwargs)

    def describe(self) -> dict[str, object]:
        out: dict[str, object] = {
            "lambda": self.lam,
            "mu_low": self.mu_low,
            "mu_high": self.mu_high,
            "c": self.c,
            "R": self.R,
            "beta": self.beta,
            "reward_timing": self.reward_timing.value,
        }
        out.update(self.holding.describe())
        return out


@dataclass(frozen=True)
class UniformizedModel:
    p_arrival: float
    p_low_service: float
    p_extra_service: float
    p_self_empty: float
    alpha: float
    cost_scale: float

    @property
    def discount_complement(self) -> float:
        return 1.0 - self.alpha


def uniformize(model: ModelParams) -> UniformizedModel:
    total = model.max_rate + model.beta
    return UniformizedModel(
        p_arrival=model.lam / total,
        p_low_service=model.mu_low / total,
        p_extra_service=model.delta / total,
        p_self_empty=model.mu_high / total,
        alpha=model.max_rate / total,
        cost_scale=1.0 / total,
    )


@dataclass(frozen=True)
class TruncationSpec:
    """State-space cap. With ``adaptive`` the cap doubles until thresholds clear the margin."""

    x_max: int = 64
    safety_margin: int = 8
    adaptive: bool = True
    max_x_max: int = 4096

    def __post_init__(self):
        if self.x_max < self.safety_margin + 2:
            raise ModelError(f"x_max={self.x_max} must be at least safety_margin + 2 = {self.safety_margin + 2}")
        if self.safety_margin < 0:
            raise ModelError("safety_margin must be nonnegative")

    def with_x_max(self, x_max: int) -> TruncationSpec:
        return TruncationSpec(x_max, self.safety_margin, self.adaptive, max(self.max_x_max, x_max))


def fixed_truncation(x_max: int) -> TruncationSpec:
    """Non-adaptive cap with no safety margin, for exhaustive small-instance checks."""
    return TruncationSpec(x_max=x_max, safety_margin=0, adaptive=False, max_x_max=x_max)


@dataclass(frozen=True)
class Assumption1Verdict:
    holds: bool
    theta: float
    J: int | None
    alpha_bound: float | None
    finite_prefix_only: bool = False


_GRID_DENSE = 2000
_MIN_WEIGHT = 1e-12


def _x_grid(J: int) -> np.ndarray:
    # dense near zero, geometric far out; the growth ratio is smooth in x
    far = np.unique(np.floor(np.geomspace(_GRID_DENSE, 1e6 * max(J, 1), 400)))
    return np.concatenate([np.arange(_GRID_DENSE, dtype=float), far])


def _power_ratio_sup(spec: PowerCost, scale: float, weight0: float, J: int) -> float:
    x = _x_grid(J)
    K = spec.K * scale
    w = weight0 + K * x**spec.m
    w_shift = weight0 + K * (x + J) ** spec.m
    return float(max(np.max(w_shift / w), 1.0))


def _exp_ratio_sup(spec: ExponentialCost, scale: float, weight0: float, J: int) -> float:
    lr = math.log(spec.rho)
    x_top = max(10, int(math.ceil(40.0 / lr)))
    x = np.arange(x_top + 1, dtype=float)
    K = spec.K * scale
    w = weight0 + K * np.expm1(x * lr)
    w_shift = weight0 + K * np.expm1((x + J) * lr)
    return float(max(np.max(w_shift / w), spec.rho**J))


def _smallest_J(sup_at, base: float, limit: int = 1 << 50) -> tuple[int, float]:
    """Smallest J with base**J * sup_at(J) < 1, by doubling then bisection."""
    J = 1
    while True:
        val = base**J * sup_at(J)
        if val < 1.0:
            break
        J *= 2
        if J > limit:
            raise AssumptionViolated(f"no J <= {limit} satisfies the growth condition")
    if J <= 64:
        for j in range(1, J + 1):
            v = base**j * sup_at(j)
            if v < 1.0:
                return j, v
    lo, hi = J // 2, J
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if base**mid * sup_at(mid) < 1.0:
            hi = mid
        else:
            lo = mid
    return hi, base**hi * sup_at(hi)


@functools.lru_cache(maxsize=256)
def validate_assumption1(h: HoldingCostSpec, model: ModelParams) -> Assumption1Verdict:
    """Check the holding-cost growth condition that guarantees value-iteration convergence.

    Checked on the time-normalized scale (rates divided by Lambda + beta):
    condition (i) is h(x+1) <= theta h(x) for x > 0; condition (ii) asks for
    J and alpha < 1 with Lambda^J w(x+J) <= alpha w(x), w(x) = R + c + h(x).
    The reported J is the smallest one that works.
    """
    scale = 1.0 / (model.max_rate + model.beta)
    lam_n = model.max_rate * scale
    weight0 = model.R + model.c * scale
    if weight0 < _MIN_WEIGHT:
        # w(0) near 0 makes w(x+J)/w(x) overflow; any larger offset still bounds the rewards
        weight0 = 1.0

    if isinstance(h, PowerCost):
        theta = 2.0**h.m
        J, alpha = _smallest_J(lambda j: _power_ratio_sup(h, scale, weight0, j), lam_n)
        return Assumption1Verdict(True, theta, J, alpha)

    if isinstance(h, ExponentialCost):
        if h.rho * lam_n >= 1.0:
            raise AssumptionViolated(
                f"exponential growth rho={h.rho} not below 1/Lambda={1 / lam_n:.6g} on the normalized scale"
            )
        theta = h.rho + 1.0
        J, alpha = _smallest_J(lambda j: _exp_ratio_sup(h, scale, weight0, j), lam_n)
        return Assumption1Verdict(True, theta, J, alpha)

    if isinstance(h, TabularCost):
        vals = np.asarray(h.values)
        theta = float(np.max(vals[2:] / vals[1:-1])) if len(vals) > 2 else float("nan")
        w = weight0 + vals * scale
        for J in range(1, len(vals)):
            alpha = float(np.max(lam_n**J * w[J:] / w[:-J]))
            if alpha < 1.0:
                return Assumption1Verdict(True, theta, J, alpha, finite_prefix_only=True)
        return Assumption1Verdict(True, theta, None, None, finite_prefix_only=True)

    raise TypeError(f"unknown holding cost spec {h!r}")
