"""Continuous-time Monte Carlo for the controlled queue under a threshold policy.

Random numbers come from numpy's Philox counter-based generator. The seed is
expanded with ``SeedSequence(seed).spawn`` into one independent substream per
block of ``BLOCK`` replications, so estimates depend only on (seed, config)
and not on how the work is scheduled.

Between events the state is constant, so holding and service costs are
integrated in closed form; there is no time discretization.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from flexqueue.dp import ThresholdPolicy, Variant
from flexqueue.errors import UnstablePolicyWarning
from flexqueue.model import ModelParams, RewardTiming

BLOCK = 1024


@dataclass(frozen=True)
class DiscountedEffective:
    """Run each path until the discounted tail is below ``epsilon_tail`` relative to |value| + 1."""

    epsilon_tail: float = 1e-6

    def __post_init__(self):
        if not 0 < self.epsilon_tail < 1:
            raise ValueError(f"epsilon_tail must lie in (0, 1), got {self.epsilon_tail}")


@dataclass(frozen=True)
class TimeAverage:
    """Run each path to time ``T``; drop the first ``warmup`` fraction and form ``batches`` batch means."""

    T: float
    warmup: float = 0.1
    batches: int = 32

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if not 0 <= self.warmup < 1:
            raise ValueError(f"warmup fraction must lie in [0, 1), got {self.warmup}")
        if self.batches < 2:
            raise ValueError("need at least two batches")


@dataclass(frozen=True)
class SimConfig:
    seed: int
    replications: int
    horizon: DiscountedEffective | TimeAverage = field(default_factory=DiscountedEffective)
    initial_state: tuple[int, int] = (0, 0)

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        x, i = self.initial_state
        if x < 0 or i not in (0, 1):
            raise ValueError(f"invalid initial state {self.initial_state}")


@dataclass(frozen=True)
class SimEstimate:
    mean: float
    half_width_95: float
    replications_used: int

    def format(self) -> str:
        return f"{self.mean:.10g},{self.half_width_95:.6g},{self.replications_used}"

    def covers(self, value: float, k: float = 3.0, atol: float = 1e-9) -> bool:
        """True when ``value`` lies within k half-widths (plus ``atol`` for roundoff) of the mean."""
        return abs(value - self.mean) <= k * self.half_width_95 + atol


def _block_generators(seed: int, n: int) -> list[np.random.Generator]:
    n_blocks = -(-n // BLOCK)
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(n_blocks)]


def _ci(samples: np.ndarray) -> tuple[float, float]:
    n = samples.size
    mean = float(np.sum(samples) / n)
    if n < 2:
        return mean, math.inf
    sd = float(np.std(samples, ddof=1))
    return mean, float(stats.t.ppf(0.975, n - 1) * sd / math.sqrt(n))


def _cost(model: ModelParams, x: np.ndarray) -> np.ndarray:
    top = int(np.max(x)) if x.size else 0
    return model.holding.array(max(top, 1))[x]


class _Rates:
    """Per-state rates and cost rate for a fixed policy."""

    def __init__(self, policy: ThresholdPolicy, model: ModelParams):
        self.policy = policy
        self.model = model
        self.combined = policy.variant is Variant.COMBINED
        self.at_admission = policy.timing is RewardTiming.AT_ADMISSION

    def fast(self, x):
        if not self.combined:
            return np.zeros_like(x, dtype=bool)
        return (x > 0) & (x > self.policy.b_service)

    def admit(self, x):
        return x <= self.policy.b_admission


def simulate_discounted(policy: ThresholdPolicy, model: ModelParams, cfg: SimConfig) -> SimEstimate:
    """Estimate the discounted net profit of ``policy`` from ``cfg.initial_state``."""
    if not isinstance(cfg.horizon, DiscountedEffective):
        raise ValueError("simulate_discounted needs a DiscountedEffective horizon")
    rates = _Rates(policy, model)
    out = []
    for b, gen in enumerate(_block_generators(cfg.seed, cfg.replications)):
        n = min(BLOCK, cfg.replications - b * BLOCK)
        out.append(_discounted_block(rates, model, cfg, n, gen))
    return SimEstimate(*_ci(np.concatenate(out)), cfg.replications)


def _tail_level(model: ModelParams, policy: ThresholdPolicy, x: np.ndarray) -> np.ndarray:
    # largest reachable cost rate plus reward rate, as a function of the current queue
    if math.isfinite(policy.b_admission):
        reach = np.maximum(x, int(policy.b_admission) + 1)
    else:
        # unbounded admission: a generous allowance for future arrivals rather than a strict bound
        reach = x + int(math.ceil(4.0 * model.lam / model.beta)) + 1
    reward_rate = model.R * max(model.lam, model.mu_high)
    return reward_rate + model.c + _cost(model, reach)


def _discounted_block(rates: _Rates, model: ModelParams, cfg: SimConfig, n: int, gen) -> np.ndarray:
    beta, lam, eps = model.beta, model.lam, cfg.horizon.epsilon_tail
    R = model.R
    x0, i0 = cfg.initial_state
    x = np.full(n, x0, dtype=np.int64)
    acc = np.zeros(n)
    if i0 == 1:
        adm = rates.admit(x)
        if rates.at_admission:
            acc += np.where(adm, R, 0.0)
        x += adm
    t = np.zeros(n)
    active = np.arange(n)
    while active.size:
        xa, ta = x[active], t[active]
        fast = rates.fast(xa)
        mu = np.where(xa > 0, np.where(fast, model.mu_high, model.mu_low), 0.0)
        total = lam + mu
        dt = gen.exponential(size=active.size) / total
        disc0 = np.exp(-beta * ta)
        # exact integral of e^{-beta s} over [t, t + dt] times the constant cost rate
        cost_rate = _cost(model, xa) + np.where(fast, model.c, 0.0)
        acc[active] -= cost_rate * disc0 * (-np.expm1(-beta * dt)) / beta
        tn = ta + dt
        disc1 = np.exp(-beta * tn)
        arrival = gen.random(size=active.size) * total < lam
        adm = arrival & rates.admit(xa)
        dep = ~arrival
        if rates.at_admission:
            acc[active] += np.where(adm, R * disc1, 0.0)
        else:
            acc[active] += np.where(dep, R * disc1, 0.0)
        xn = xa + adm - dep
        x[active] = xn
        t[active] = tn
        tail = disc1 * _tail_level(model, rates.policy, xn) / beta
        active = active[tail > eps * (np.abs(acc[active]) + 1.0)]
    return acc


@dataclass
class _Recorder:
    """Accumulates net profit into time batches over [warm, T]."""

    warm: float
    length: float
    batches: np.ndarray

    def add_cost(self, rate: float, a: float, b: float):
        # spread a constant cost rate over the batches overlapped by [a, b]
        a = max(a, self.warm)
        nb = self.batches.size
        while a < b:
            k = min(int((a - self.warm) / self.length), nb - 1)
            edge = self.warm + (k + 1) * self.length if k < nb - 1 else math.inf
            end = min(b, edge)
            self.batches[k] -= rate * (end - a)
            a = end

    def add_reward(self, r: float, s: float):
        if s >= self.warm:
            k = min(int((s - self.warm) / self.length), self.batches.size - 1)
            self.batches[k] += r


def _trajectory(rates: _Rates, model: ModelParams, state, T: float, gen, on_interval, on_event):
    """Event loop over [0, T]; callbacks see each constant-state interval and each event."""
    R, lam = model.R, model.lam
    h_cache: dict[int, float] = {}

    def h(x):
        v = h_cache.get(x)
        if v is None:
            v = h_cache[x] = float(_cost(model, np.array([x]))[0])
        return v

    x, i = state
    t = 0.0
    if i == 1:
        a = bool(rates.admit(x))
        on_event(0.0, "arrival", x, a, R if a and rates.at_admission else 0.0)
        x += a
    chunk = 4096
    expo, unif, j = gen.exponential(size=chunk), gen.random(size=chunk), 0
    while True:
        if j == chunk:
            expo, unif, j = gen.exponential(size=chunk), gen.random(size=chunk), 0
        fast = bool(rates.fast(x))
        mu = (model.mu_high if fast else model.mu_low) if x > 0 else 0.0
        total = lam + mu
        tn = t + expo[j] / total
        on_interval(h(x) + (model.c if fast else 0.0), t, min(tn, T), x, fast)
        if tn >= T:
            return
        if unif[j] * total < lam:
            a = bool(rates.admit(x))
            on_event(tn, "arrival", x, a, R if a and rates.at_admission else 0.0)
            x += a
        else:
            on_event(tn, "departure", x, False, 0.0 if rates.at_admission else R)
            x -= 1
        t = tn
        j += 1


def simulate_average(policy: ThresholdPolicy, model: ModelParams, cfg: SimConfig) -> SimEstimate:
    """Batch-means estimate of long-run net profit per unit time."""
    hz = cfg.horizon
    if not isinstance(hz, TimeAverage):
        raise ValueError("simulate_average needs a TimeAverage horizon")
    if math.isinf(policy.b_admission) and model.lam > model.mu_high:
        warnings.warn(
            "policy admits everything while lambda exceeds mu_high; the queue is unstable",
            UnstablePolicyWarning,
            stacklevel=2,
        )
    rates = _Rates(policy, model)
    warm = hz.warmup * hz.T
    length = (hz.T - warm) / hz.batches
    pooled = []
    for b, gen in enumerate(_block_generators(cfg.seed, cfg.replications)):
        n = min(BLOCK, cfg.replications - b * BLOCK)
        for _ in range(n):
            rec = _Recorder(warm, length, np.zeros(hz.batches))
            _trajectory(
                rates,
                model,
                cfg.initial_state,
                hz.T,
                gen,
                lambda rate, a, e, x, f: rec.add_cost(rate, a, e),
                lambda s, kind, x, a, r: rec.add_reward(r, s) if r else None,
            )
            pooled.append(rec.batches / length)
    return SimEstimate(*_ci(np.concatenate(pooled)), cfg.replications)


def write_trace(path, policy: ThresholdPolicy, model: ModelParams, T: float, seed: int, initial_state=(0, 0)) -> int:
    """Write one sample path as CSV ``t,event,x,action_service,action_admit``; returns the row count."""
    rates = _Rates(policy, model)
    gen = _block_generators(seed, 1)[0]
    rows = []

    def on_event(s, kind, x, admitted, _r):
        svc = "h" if rates.fast(x) else "l"
        rows.append((f"{s:.9g}", kind, x, svc, int(admitted) if kind == "arrival" else ""))

    _trajectory(rates, model, initial_state, T, gen, lambda *a: None, on_event)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "event", "x", "action_service", "action_admit"])
        w.writerows(rows)
    return len(rows)
