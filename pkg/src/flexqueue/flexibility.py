"""Value of service-rate flexibility, critical reward, sweeps and the average-reward limit."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from flexqueue.dp import (
    ThresholdPolicy,
    ValueFunction,
    Variant,
    finite_horizon_iterate,
    solve_discounted,
)
from flexqueue.errors import FlexQueueError, NoCrossingInRange, NotStabilized
from flexqueue.model import ModelParams, RewardTiming, TruncationSpec, validate_assumption1

log = logging.getLogger(__name__)


class FlexVerdict(enum.Enum):
    VALUELESS = "valueless"  # Bs >= Bd + 1
    ACTIVE = "active"  # Bs <= Bd


def verdict_of(policy: ThresholdPolicy) -> FlexVerdict:
    return FlexVerdict.VALUELESS if policy.flexibility_valueless else FlexVerdict.ACTIVE


@dataclass(frozen=True, eq=False)
class FlexibilityReport:
    epsilon: np.ndarray
    relative_at_origin: float
    relative_is_absolute: bool
    thresholds_combined: ThresholdPolicy
    threshold_admission_only: float
    ordering_verdict: FlexVerdict
    combined: ValueFunction
    admission_only: ValueFunction

    @property
    def x_max(self) -> int:
        return self.combined.x_max


def flexibility(
    model: ModelParams,
    trunc: TruncationSpec | None = None,
    tol: float = 1e-9,
    horizon: int | None = None,
) -> FlexibilityReport:
    """Solve the combined problem and the low-rate-only subproblem on one cap and compare.

    ``horizon`` switches from the infinite-horizon solution to the
    ``horizon``-step finite-horizon values.
    """
    trunc = trunc or TruncationSpec()
    if horizon is None:
        v = solve_discounted(model, trunc, tol, variant=Variant.COMBINED)
        same_cap = TruncationSpec(v.x_max, trunc.safety_margin, adaptive=False, max_x_max=v.x_max)
        vh = solve_discounted(model, same_cap, tol, variant=Variant.ADMISSION_ONLY)
    else:
        v = finite_horizon_iterate(model, horizon, trunc, Variant.COMBINED, check_truncation=False)[-1]
        vh = finite_horizon_iterate(model, horizon, trunc, Variant.ADMISSION_ONLY, check_truncation=False)[-1]

    policy = v.policy(tol=tol)
    policy_hat = vh.policy(tol=tol)
    eps = np.asarray(v.values) - np.asarray(vh.values)
    base = vh(0, 0)
    if base > 0:
        rel, absolute = eps[0, 0] / base, False
    else:
        rel, absolute = eps[0, 0], True
    return FlexibilityReport(
        epsilon=eps,
        relative_at_origin=float(rel),
        relative_is_absolute=absolute,
        thresholds_combined=policy,
        threshold_admission_only=policy_hat.b_admission,
        ordering_verdict=verdict_of(policy),
        combined=v,
        admission_only=vh,
    )


def structural_violations(report: FlexibilityReport, margin: int | None = None, slack: float = 1e-9) -> list[str]:
    """Check the monotonicity and concavity properties every exact solution must have.

    Covers: values nonincreasing in x (admission-timed reward only), burdens
    nondecreasing in x for both problems, flexibility value nonnegative and
    nondecreasing in x, and the low-rate admission threshold not above the
    combined one. States within ``margin`` of the cap are skipped.
    """
    v = np.asarray(report.combined.values)
    vh = np.asarray(report.admission_only.values)
    n = v.shape[0] - 1
    top = n - (8 if margin is None else margin)
    scale = max(float(np.max(np.abs(v))), float(np.max(np.abs(vh))))
    tol = max(slack, 64 * np.finfo(float).eps * scale)
    out = []

    def check(name, arr, direction):
        d = np.diff(arr[: top + 1], axis=0) * direction
        bad = np.argwhere(d < -tol)
        if bad.size:
            x, i = bad[0]
            out.append(f"{name} at x={x}, i={i}: step {d[x, i] * direction:.3e}")

    if report.combined.timing is RewardTiming.AT_ADMISSION:
        check("value not nonincreasing", v, -1)
        check("low-rate value not nonincreasing", vh, -1)
    check("burden not nondecreasing", -np.diff(v, axis=0), 1)
    check("low-rate burden not nondecreasing", -np.diff(vh, axis=0), 1)
    eps = report.epsilon[: top + 1]
    if eps.min() < -tol:
        x, i = np.argwhere(eps == eps.min())[0]
        out.append(f"flexibility value negative at x={x}, i={i}: {eps.min():.3e}")
    check("flexibility value not nondecreasing", report.epsilon, 1)
    if not report.threshold_admission_only <= report.thresholds_combined.b_admission:
        out.append(
            f"low-rate admission threshold {report.threshold_admission_only} exceeds "
            f"{report.thresholds_combined.b_admission}"
        )
    return out


@dataclass(frozen=True)
class CriticalReward:
    R_tilde: float
    bracket: tuple[float, float]
    scan: list[tuple[float, FlexVerdict]]
    crossings: int


def critical_reward(
    model: ModelParams,
    R_range: tuple[float, float],
    resolution: float,
    bisect_tol: float | None = None,
    trunc: TruncationSpec | None = None,
    tol: float = 1e-9,
) -> CriticalReward:
    """Locate the reward level where the combined thresholds switch from Bs >= Bd+1 to Bs <= Bd.

    The full grid scan is always returned. The bracket is refined by
    bisection only when the scan shows exactly one valueless-to-active change.
    """
    lo, hi = R_range
    if lo < 0 or hi < lo:
        raise ValueError(f"bad reward range {R_range}")
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    n = int(math.floor((hi - lo) / resolution + 1e-9))
    grid = [lo + resolution * k for k in range(n + 1)]

    def verdict(R):
        return verdict_of(solve_discounted(model.replace(R=R), trunc, tol).policy(tol=tol))

    scan = [(R, verdict(R)) for R in grid]
    changes = [j for j in range(len(scan) - 1) if scan[j][1] is not scan[j + 1][1]]
    if not changes:
        raise NoCrossingInRange(f"verdict {scan[0][1].value} throughout R in [{lo}, {hi}]")

    valueless = [j for j, (_, vd) in enumerate(scan) if vd is FlexVerdict.VALUELESS]
    if not valueless:
        raise NoCrossingInRange("no valueless reward level in range")
    j = valueless[-1]
    if j == len(scan) - 1:
        raise NoCrossingInRange("verdict still valueless at the top of the range")
    low, high = scan[j][0], scan[j + 1][0]
    if len(changes) == 1 and bisect_tol is not None:
        while high - low > bisect_tol:
            mid = 0.5 * (low + high)
            if verdict(mid) is FlexVerdict.VALUELESS:
                low = mid
            else:
                high = mid
    return CriticalReward(low, (low, high), scan, len(changes))


_AXES = {"R": "R", "c": "c", "mu_high": "mu_high", "lambda": "lam", "beta": "beta"}


@dataclass(frozen=True)
class SweepRow:
    value: float
    b_service: float = math.nan
    b_admission: float = math.nan
    b_admission_only: float = math.nan
    relative_flexibility: float = math.nan
    relative_is_absolute: bool = False
    violations: tuple[str, ...] = ()
    error: str | None = None


def sweep(
    base: ModelParams,
    axis: str,
    values,
    trunc: TruncationSpec | None = None,
    tol: float = 1e-9,
) -> list[SweepRow]:
    """One flexibility run per parameter value; failing rows keep their error and the sweep goes on."""
    if axis not in _AXES:
        raise ValueError(f"axis must be one of {sorted(_AXES)}, got {axis!r}")
    rows = []
    for value in sorted(float(v) for v in values):
        try:
            report = flexibility(base.replace(**{_AXES[axis]: value}), trunc, tol)
        except FlexQueueError as exc:
            log.warning("sweep %s=%g failed: %s", axis, value, exc)
            rows.append(SweepRow(value, error=f"{type(exc).__name__}: {exc}"))
            continue
        p = report.thresholds_combined
        rows.append(
            SweepRow(
                value,
                p.b_service,
                p.b_admission,
                report.threshold_admission_only,
                report.relative_at_origin,
                report.relative_is_absolute,
                tuple(structural_violations(report, trunc.safety_margin if trunc else None)),
            )
        )
    return rows


@dataclass(frozen=True, eq=False)
class AverageRewardResult:
    g_star: float
    beta_sequence: list[float]
    g_trace: list[float]
    relative_values: np.ndarray
    policy: ThresholdPolicy
    stabilized: bool
    bias: np.ndarray
    inequality_residual: float
    spread_trace: list[float] = field(default_factory=list)
    policy_trace: list[ThresholdPolicy] = field(default_factory=list)

    @property
    def x_max(self) -> int:
        return self.bias.shape[0] - 1


def gain_and_bias(
    model: ModelParams, policy: ThresholdPolicy, x_max: int
) -> tuple[float, np.ndarray]:
    """Long-run gain and relative values (anchored at (0, 0)) of a threshold policy.

    Solves the uniformized average-reward evaluation equations with
    w(0, 0) = 0; these are the beta -> 0 limits of beta * v_beta(0, 0) and
    v_beta - v_beta(0, 0) for a fixed policy.
    """
    admit, fast = policy.action_arrays(x_max)
    at_adm = policy.timing is RewardTiming.AT_ADMISSION
    R_adm, R_dep = (model.R, 0.0) if at_adm else (0.0, model.R)
    h = model.holding.array(x_max)
    a = admit.astype(float)
    down = np.where(fast, model.mu_high, model.mu_low)
    down[0] = 0.0
    n = x_max + 1
    A = np.zeros((n, n))
    idx = np.arange(n)
    A[idx, idx] = model.lam * a + down
    A[idx[:-1], idx[:-1] + 1] = -model.lam * a[:-1]
    A[idx[1:], idx[1:] - 1] = -down[1:]
    rhs = -h - model.c * fast + model.lam * R_adm * a + down * R_dep
    # w(0,0) = 0 is pinned, so its column carries the gain instead
    A[:, 0] = 1.0
    sol = np.linalg.solve(A, rhs)
    g = float(sol[0])
    w0 = sol.copy()
    w0[0] = 0.0
    w1 = w0.copy()
    w1[:-1] = np.where(admit[:-1], R_adm + w0[1:], w0[:-1])
    return g, np.column_stack([w0, w1])


def optimality_inequality_residuals(
    model: ModelParams, w: np.ndarray, g: float, timing: RewardTiming, variant: Variant = Variant.COMBINED
) -> np.ndarray:
    """Residual LHS - RHS of the average-reward optimality relations, shape (x_max, 2).

    Row x holds the arrival-state relation in column 1 and the service-state
    relation in column 0 (the empty-state relation at x = 0). The cap row is
    omitted because its admission is forced.
    """
    L = model.max_rate
    at_adm = timing is RewardTiming.AT_ADMISSION
    R_adm, R_dep = (model.R, 0.0) if at_adm else (0.0, model.R)
    w0, w1 = w[:, 0], w[:, 1]
    n = w.shape[0] - 1
    h = model.holding.array(n)
    res = np.zeros((n, 2))
    res[:, 1] = w1[:-1] - np.maximum(R_adm + w0[1:], w0[:-1])
    res[0, 0] = w0[0] - (-g + model.lam * w1[0] + model.mu_high * w0[0]) / L
    x = np.arange(1, n)
    down = w0[x - 1] + R_dep
    low = model.delta * w0[x]
    serv = np.maximum(low, -model.c + model.delta * down) if variant is Variant.COMBINED else low
    res[1:, 0] = w0[x] - (-h[x] - g + model.lam * w1[x] + model.mu_low * down + serv) / L
    return res


DEFAULT_SAMPLE_STATES = tuple((x, i) for x in range(5) for i in (0, 1))


def average_reward(
    model: ModelParams,
    trunc: TruncationSpec | None = None,
    beta0: float = 1.0,
    shrink: float = 0.5,
    stop_tol: float = 1e-6,
    max_stages: int = 30,
    tol: float = 1e-9,
    sample_states=DEFAULT_SAMPLE_STATES,
    variant: Variant = Variant.COMBINED,
    spread_tol: float | None = 1e-4,
) -> AverageRewardResult:
    """Average-reward optimum as the limit of discounted optima along beta_n = beta0 * shrink**n.

    Stops at the first stage whose gain estimate beta_n v(0, 0) moved by at
    most ``stop_tol``, whose thresholds equal those of the previous stage and,
    unless ``spread_tol`` is None, whose spread of beta_n v(x, i) over
    ``sample_states`` is at most ``spread_tol``.
    The gain and relative values of the stabilized policy are then computed
    exactly and certified against the average-reward optimality relations.
    """
    if not 0 < shrink < 1:
        raise ValueError("shrink must lie in (0, 1)")
    trunc = trunc or TruncationSpec()
    validate_assumption1(model.holding, model.replace(beta=beta0))

    betas, gs, spreads, policies = [], [], [], []
    vf = None
    for n in range(max_stages):
        beta = beta0 * shrink**n
        vf = solve_discounted(model.replace(beta=beta), trunc, tol, variant=variant)
        pol = vf.policy(tol=tol)
        g = beta * vf(0, 0)
        spread = max(abs(beta * (vf(x, i) - vf(0, 0))) for x, i in sample_states)
        betas.append(beta)
        gs.append(g)
        spreads.append(spread)
        policies.append(pol)
        log.debug("stage %d beta=%g g=%.10g %s", n, beta, g, pol.describe())
        settled = spread_tol is None or spread <= spread_tol
        if n >= 1 and abs(g - gs[-2]) <= stop_tol and pol == policies[-2] and settled:
            break
    else:
        raise NotStabilized(max_stages)

    policy = policies[-1]
    x_max = vf.x_max
    g_star, bias = gain_and_bias(model, policy, x_max)
    res = optimality_inequality_residuals(model, bias, g_star, policy.timing, variant)
    interior = max(1, x_max - trunc.safety_margin)
    relative = np.asarray(vf.values) - vf(0, 0)
    return AverageRewardResult(
        g_star=g_star,
        beta_sequence=betas,
        g_trace=gs,
        relative_values=relative,
        policy=policy,
        stabilized=True,
        bias=bias,
        inequality_residual=float(np.max(np.abs(res[:interior]))),
        spread_trace=spreads,
        policy_trace=policies,
    )

