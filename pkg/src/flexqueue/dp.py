"""Discounted dynamic programming for joint admission and service-rate control.

States are (x, i): x customers present, i = 1 at an arrival epoch (admission
decision pending) and i = 0 otherwise. Values are stored as an array of shape
``(x_max + 1, 2)`` indexed ``values[x, i]``.

The value of an arrival state is a function of the same-step (x, 0) values,
so every sweep first updates v(., 0) from the previous step and then derives
v(., 1) from the fresh v(., 0). At the cap ``x_max`` arrivals are rejected.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from flexqueue.errors import (
    NearTieWarning,
    NoConvergence,
    NonMonotoneBurden,
    SingularSystem,
    TruncationTooTight,
)
from flexqueue.model import ModelParams, RewardTiming, TabularCost, TruncationSpec, validate_assumption1

INF = math.inf


class Variant(enum.Enum):
    COMBINED = "combined"
    ADMISSION_ONLY = "admission_only"


@dataclass(frozen=True)
class FiniteHorizon:
    n: int


@dataclass(frozen=True)
class FixedPoint:
    residual: float
    iterations: int


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ValueFunction:
    values: np.ndarray
    model: ModelParams
    horizon: FiniteHorizon | FixedPoint
    variant: Variant = Variant.COMBINED
    timing: RewardTiming = RewardTiming.AT_ADMISSION
    extrapolated: bool = False

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(self.values))

    @property
    def x_max(self) -> int:
        return self.values.shape[0] - 1

    def __call__(self, x: int, i: int) -> float:
        return float(self.values[x, i])

    def rows(self):
        """(x, i, value) triples in CSV order."""
        for x in range(self.values.shape[0]):
            for i in (0, 1):
                yield x, i, float(self.values[x, i])

    def policy(self, tol: float = 1e-9) -> ThresholdPolicy:
        return extract_thresholds(burden_of(self), tol=tol)


@dataclass(frozen=True, eq=False)
class BurdenFunction:
    """delta[x, i] = v(x, i) - v(x + 1, i) for x = 0..x_max-1."""

    delta: np.ndarray
    model: ModelParams
    timing: RewardTiming
    variant: Variant
    value_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "delta", _freeze(self.delta))

    @property
    def slack(self) -> float:
        # roundoff in a difference of two values of size value_scale
        return 1e-9 + 64 * np.finfo(float).eps * self.value_scale


@dataclass(frozen=True)
class ThresholdPolicy:
    """Serve low iff x <= b_service (always at x = 0); admit iff x <= b_admission.

    ``math.inf`` stands for a threshold that is not reached anywhere in the
    truncated state space.
    """

    b_service: float
    b_admission: float
    variant: Variant = Variant.COMBINED
    timing: RewardTiming = RewardTiming.AT_ADMISSION

    def admits(self, x: int) -> bool:
        return x <= self.b_admission

    def serves_fast(self, x: int) -> bool:
        return self.variant is Variant.COMBINED and x > 0 and x > self.b_service

    def action_arrays(self, x_max: int) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(x_max + 1)
        admit = (x <= self.b_admission) & (x < x_max)
        fast = np.zeros(x_max + 1, dtype=bool)
        if self.variant is Variant.COMBINED:
            fast = (x > 0) & (x > self.b_service)
        return admit, fast

    @property
    def flexibility_valueless(self) -> bool:
        return self.b_service >= self.b_admission + 1

    def describe(self) -> str:
        return f"Bs={format_threshold(self.b_service)} Bd={format_threshold(self.b_admission)}"


def format_threshold(b: float) -> str:
    return "inf" if b == INF else str(int(b))


@dataclass(frozen=True, eq=False)
class PolicyValue:
    values: np.ndarray
    policy: ThresholdPolicy
    model: ModelParams

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(self.values))

    @property
    def x_max(self) -> int:
        return self.values.shape[0] - 1

    def __call__(self, x: int, i: int) -> float:
        return float(self.values[x, i])


@dataclass(frozen=True)
class _Kernel:
    N: int
    h: np.ndarray
    lam: float
    mu_low: float
    mu_high: float
    delta: float
    c: float
    beta: float
    D: float
    R_adm: float
    R_dep: float
    combined: bool

    @property
    def alpha(self) -> float:
        return (self.lam + self.mu_high) / self.D


def _kernel(model: ModelParams, x_max: int, variant: Variant, timing: RewardTiming) -> tuple[_Kernel, bool]:
    h = model.holding.array(x_max)
    extrapolated = isinstance(model.holding, TabularCost) and x_max > model.holding.last_index
    at_adm = timing is RewardTiming.AT_ADMISSION
    k = _Kernel(
        N=x_max,
        h=h,
        lam=model.lam,
        mu_low=model.mu_low,
        mu_high=model.mu_high,
        delta=model.delta,
        c=model.c,
        beta=model.beta,
        D=model.max_rate + model.beta,
        R_adm=model.R if at_adm else 0.0,
        R_dep=0.0 if at_adm else model.R,
        combined=variant is Variant.COMBINED,
    )
    return k, extrapolated


def _arrival_values(k: _Kernel, v0: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """v(., 1) and the greedy admission decisions, given v(., 0) of the same step."""
    admit = np.zeros(k.N + 1, dtype=bool)
    gain = k.R_adm + v0[1:]
    admit[:-1] = gain >= v0[:-1]
    v1 = v0.copy()
    v1[:-1] = np.where(admit[:-1], gain, v0[:-1])
    return v1, admit


def _bellman(k: _Kernel, v0: np.ndarray, v1: np.ndarray | None = None):
    if v1 is None:
        v1, admit = _arrival_values(k, v0)
    else:
        admit = np.zeros(k.N + 1, dtype=bool)
    down = v0[:-1] + k.R_dep
    low = k.delta * v0[1:]
    fast = np.zeros(k.N + 1, dtype=bool)
    if k.combined:
        high = -k.c + k.delta * down
        fast[1:] = high > low
        serv = np.where(fast[1:], high, low)
    else:
        serv = low
    new = np.empty_like(v0)
    new[0] = (k.lam * v1[0] + k.mu_high * v0[0]) / k.D
    new[1:] = (-k.h[1:] + k.lam * v1[1:] + k.mu_low * down + serv) / k.D
    return new, v1, admit, fast


def _evaluate(k: _Kernel, admit: np.ndarray, fast: np.ndarray) -> np.ndarray:
    """Exact v(., 0) of a stationary deterministic policy (tridiagonal solve)."""
    admit = admit.astype(float)
    admit[-1] = 0.0
    down_rate = np.where(fast, k.mu_high, k.mu_low)
    down_rate[0] = 0.0
    # diagonal written as outflow + beta to avoid cancellation when beta is small
    diag = k.beta + k.lam * admit + down_rate
    ab = np.zeros((3, k.N + 1))
    ab[0, 1:] = -k.lam * admit[:-1]
    ab[1] = diag
    ab[2, :-1] = -down_rate[1:]
    rhs = -k.h - k.c * fast + k.lam * k.R_adm * admit + down_rate * k.R_dep
    try:
        v0 = linalg.solve_banded((1, 1), ab, rhs, check_finite=False)
        # the system is ill-conditioned like 1/beta; refine with the residual in
        # neighbour-difference form, which stays accurate when values are huge
        for _ in range(2):
            up = np.zeros_like(v0)
            dn = np.zeros_like(v0)
            up[:-1] = v0[:-1] - v0[1:]
            dn[1:] = v0[1:] - v0[:-1]
            res = rhs - k.beta * v0 - k.lam * admit * up - down_rate * dn
            v0 = v0 + linalg.solve_banded((1, 1), ab, res, check_finite=False)
    except linalg.LinAlgError:
        v0 = _evaluate_iterative(k, ab, rhs)
    if not np.all(np.isfinite(v0)):
        raise SingularSystem("policy evaluation produced non-finite values")
    return v0


def _evaluate_iterative(k: _Kernel, ab: np.ndarray, rhs: np.ndarray, max_iters: int = 1_000_000) -> np.ndarray:
    # Jacobi sweeps on the uniformized system; contraction factor is alpha < 1
    diag = ab[1]
    v = np.zeros_like(rhs)
    for _ in range(max_iters):
        off = np.zeros_like(v)
        off[:-1] += ab[0, 1:] * v[1:]
        off[1:] += ab[2, :-1] * v[:-1]
        new = (rhs - off) / diag
        if np.max(np.abs(new - v)) <= 1e-13 * (1.0 + np.max(np.abs(new))):
            return new
        v = new
    raise SingularSystem("iterative policy evaluation did not converge")


def _stack(v0: np.ndarray, v1: np.ndarray) -> np.ndarray:
    return np.column_stack([v0, v1])


def finite_horizon_iterate(
    model: ModelParams,
    n_steps: int,
    trunc: TruncationSpec | None = None,
    variant: Variant = Variant.COMBINED,
    timing: RewardTiming | None = None,
    check_truncation: bool = True,
) -> list[ValueFunction]:
    """Value functions v_0 .. v_n of the n-transition problem, starting from v_0 = 0."""
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    trunc = trunc or TruncationSpec()
    timing = timing or model.reward_timing
    k, extrapolated = _kernel(model, trunc.x_max, variant, timing)
    v0 = np.zeros(k.N + 1)
    v1 = np.zeros(k.N + 1)  # v_0 vanishes on arrival states too
    out = [ValueFunction(_stack(v0, v1), model, FiniteHorizon(0), variant, timing, extrapolated)]
    for n in range(1, n_steps + 1):
        v0 = _bellman(k, v0, v1)[0]
        v1, _ = _arrival_values(k, v0)
        out.append(ValueFunction(_stack(v0, v1), model, FiniteHorizon(n), variant, timing, extrapolated))
    if check_truncation and n_steps >= 1 and trunc.safety_margin > 0:
        pol = out[-1].policy()
        if not pol.b_admission <= trunc.x_max - trunc.safety_margin:
            raise TruncationTooTight(
                f"admission threshold {format_threshold(pol.b_admission)} at step {n_steps} "
                f"within {trunc.safety_margin} of x_max={trunc.x_max}"
            )
    return out


def _solve_fixed_cap(model, x_max, tol, max_iters, variant, timing, method) -> ValueFunction:
    k, extrapolated = _kernel(model, x_max, variant, timing)
    stop = tol * (1.0 - k.alpha) / k.alpha
    v0 = np.zeros(k.N + 1)
    last_key = None
    residual = INF
    for it in range(1, max_iters + 1):
        new, _, admit, fast = _bellman(k, v0)
        residual = float(np.max(np.abs(new - v0)))
        if residual <= stop:
            v0 = new
            break
        if method == "value_iteration":
            v0 = new
            continue
        key = (admit.tobytes(), fast.tobytes())
        if key == last_key:
            # greedy policy reproduces itself, so v0 is its exact value and a fixed point
            break
        last_key = key
        v0 = _evaluate(k, admit, fast)
    else:
        raise NoConvergence(max_iters, residual)
    v1, _ = _arrival_values(k, v0)
    return ValueFunction(_stack(v0, v1), model, FixedPoint(residual, it), variant, timing, extrapolated)


def _margin_problem(policy: ThresholdPolicy, x_max: int, margin: int) -> tuple[bool, bool]:
    """(admission threshold too close, service threshold too close)."""
    limit = x_max - margin
    bad_d = not policy.b_admission <= limit
    bad_s = policy.variant is Variant.COMBINED and not policy.b_service <= limit
    return bad_d, bad_s


def solve_discounted(
    model: ModelParams,
    trunc: TruncationSpec | None = None,
    tol: float = 1e-9,
    max_iters: int = 100_000,
    variant: Variant = Variant.COMBINED,
    timing: RewardTiming | None = None,
    method: str = "accelerated",
) -> ValueFunction:
    """Infinite-horizon optimal discounted values.

    ``method="value_iteration"`` runs the plain recursion until the successive
    difference is below ``tol * (1 - alpha) / alpha``. The default
    ``"accelerated"`` interleaves each sweep with an exact evaluation of the
    current greedy policy and stops once that policy reproduces itself; it
    reaches the same fixed point in a handful of sweeps even when alpha is
    close to one.

    With an adaptive truncation the cap doubles until both thresholds clear
    the safety margin. A service threshold that stays unreachable up to
    ``max_x_max`` is reported as ``inf``.
    """
    if method not in ("accelerated", "value_iteration"):
        raise ValueError(f"unknown method {method!r}")
    trunc = trunc or TruncationSpec()
    timing = timing or model.reward_timing
    verdict = validate_assumption1(model.holding, model)
    if verdict.finite_prefix_only and verdict.J is None:
        warnings.warn("growth condition could not be verified on the tabular prefix", RuntimeWarning, stacklevel=2)

    x_max = trunc.x_max
    while True:
        vf = _solve_fixed_cap(model, x_max, tol, max_iters, variant, timing, method)
        if not trunc.adaptive and trunc.safety_margin == 0:
            return vf
        policy = vf.policy(tol=tol)
        bad_d, bad_s = _margin_problem(policy, x_max, trunc.safety_margin)
        if not (bad_d or bad_s):
            return vf
        can_grow = trunc.adaptive and 2 * x_max <= trunc.max_x_max
        if can_grow:
            x_max *= 2
            continue
        if not bad_d and policy.b_service == INF:
            return vf
        raise TruncationTooTight(f"thresholds {policy.describe()} within {trunc.safety_margin} of x_max={x_max}")


def burden_of(v: ValueFunction | PolicyValue) -> BurdenFunction:
    values = v.values
    delta = values[:-1] - values[1:]
    variant = getattr(v, "variant", None) or v.policy.variant
    timing = getattr(v, "timing", None) or v.policy.timing
    scale = float(np.max(np.abs(values))) if values.size else 1.0
    return BurdenFunction(delta, v.model, timing, variant, scale)


def threshold_T(f, theta: float) -> float:
    """Largest k with f(k) <= theta, -1 if none, ``inf`` if the last index qualifies."""
    f = np.asarray(f, dtype=float)
    idx = np.nonzero(f <= theta)[0]
    if idx.size == 0:
        return -1
    k = int(idx[-1])
    return INF if k == f.size - 1 else k


def decision_levels(model: ModelParams, timing: RewardTiming) -> tuple[float, float]:
    """(service level, admission level) the burden Delta(., 0) is compared against."""
    if timing is RewardTiming.AT_ADMISSION:
        return model.c / model.delta, model.R
    return model.c / model.delta - model.R, 0.0


def extract_thresholds(
    delta: BurdenFunction,
    model: ModelParams | None = None,
    timing: RewardTiming | None = None,
    tol: float = 1e-9,
) -> ThresholdPolicy:
    model = model or delta.model
    timing = timing or delta.timing
    d0 = delta.delta[:, 0]
    steps = np.diff(d0)
    if steps.size and steps.min() < -delta.slack:
        x = int(np.argmin(steps))
        raise NonMonotoneBurden(f"Delta(x, 0) decreases at x={x} by {-steps[x]:.3e}")

    level_s, level_d = decision_levels(model, timing)
    levels = [level_d] if delta.variant is Variant.ADMISSION_ONLY else [level_s, level_d]
    for lv in levels:
        near = np.nonzero(np.abs(d0 - lv) < 10 * tol)[0]
        if near.size:
            warnings.warn(
                f"burden within {10 * tol:g} of decision level {lv:g} at x={int(near[0])}; threshold may flip",
                NearTieWarning,
                stacklevel=2,
            )

    b_adm = threshold_T(d0, level_d)
    if delta.variant is Variant.ADMISSION_ONLY:
        b_srv = INF
    else:
        b_srv = 1 + threshold_T(d0, level_s)
    return ThresholdPolicy(b_srv, b_adm, delta.variant, timing)


def greedy_actions(v: ValueFunction) -> tuple[np.ndarray, np.ndarray]:
    """Maximizing admission and service decisions of the optimality equations at v."""
    k, _ = _kernel(v.model, v.x_max, v.variant, v.timing)
    _, _, admit, fast = _bellman(k, np.array(v.values[:, 0]))
    return admit, fast


def bellman_residual(v: ValueFunction) -> float:
    """Sup-norm distance between v(., 0) and one application of the optimality operator."""
    k, _ = _kernel(v.model, v.x_max, v.variant, v.timing)
    v0 = np.array(v.values[:, 0])
    return float(np.max(np.abs(_bellman(k, v0)[0] - v0)))


def evaluate_policy_arrays(
    model: ModelParams,
    admit: np.ndarray,
    fast: np.ndarray,
    variant: Variant = Variant.COMBINED,
    timing: RewardTiming | None = None,
) -> np.ndarray:
    """Exact values, shape (x_max + 1, 2), of an arbitrary stationary policy given per-state actions."""
    timing = timing or model.reward_timing
    x_max = len(admit) - 1
    k, _ = _kernel(model, x_max, variant, timing)
    fast = np.asarray(fast, dtype=bool) & (variant is Variant.COMBINED)
    admit = np.asarray(admit, dtype=bool).copy()
    admit[-1] = False
    v0 = _evaluate(k, admit, fast)
    v1 = v0.copy()
    v1[:-1] = np.where(admit[:-1], k.R_adm + v0[1:], v0[:-1])
    return _stack(v0, v1)


def evaluate_threshold_policy(
    policy: ThresholdPolicy,
    model: ModelParams,
    trunc: TruncationSpec | int,
    variant: Variant | None = None,
) -> PolicyValue:
    """Exact discounted value of a threshold policy on the truncated state space.

    States above the cap are closed off by rejecting arrivals at ``x_max``.
    """
    x_max = trunc if isinstance(trunc, int) else trunc.x_max
    if variant is not None and variant is not policy.variant:
        policy = ThresholdPolicy(policy.b_service, policy.b_admission, variant, policy.timing)
    if policy.b_admission < -1 or policy.b_service < -1:
        raise ValueError(f"thresholds below -1: {policy.describe()}")
    admit, fast = policy.action_arrays(x_max)
    values = evaluate_policy_arrays(model, admit, fast, policy.variant, policy.timing)
    return PolicyValue(values, policy, model)
