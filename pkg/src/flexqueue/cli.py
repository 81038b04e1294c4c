"""Command-line entry point: ``flexqueue <command> [--config FILE] [--set key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 reproduced thresholds differ from the reference table.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

from flexqueue.config import Config, load_config, model_from, truncation_from
from flexqueue.dp import ThresholdPolicy, Variant, solve_discounted
from flexqueue.errors import ConfigError, FlexQueueError, ModelError
from flexqueue.flexibility import average_reward, critical_reward, flexibility, sweep
from flexqueue.model import ModelParams, PowerCost, TruncationSpec
from flexqueue.reporting import (
    DELTA_RATIOS,
    REFERENCE_BASE,
    REFERENCE_TABLE,
    REL_FLEX_TOL,
    fmt,
    fmt_threshold,
    value_rows,
    write_csv,
)
from flexqueue.simulate import (
    DiscountedEffective,
    SimConfig,
    TimeAverage,
    simulate_average,
    simulate_discounted,
    write_trace,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_MISMATCH = 0, 2, 3, 4

COMMANDS = ("solve", "flexibility", "sweep", "critical-r", "average", "simulate", "reproduce-paper")

log = logging.getLogger("flexqueue")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flexqueue", description="Admission and two-speed service control for M/M/1.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--out", help="directory for CSV artifacts")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--seed", type=int, help="simulation seed (unsigned 64-bit)")
    p.add_argument("--tol", type=float, help="solver tolerance")
    p.add_argument("--xmax", type=int, help="initial state-space cap")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


class _Run:
    """Resolved inputs shared by the command handlers."""

    def __init__(self, args, cfg: Config):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out) if args.out else None
        self.tol = args.tol if args.tol is not None else cfg.float("solver.tol", 1e-9)
        self.trunc = truncation_from(cfg, args.xmax)
        if self.out is not None:
            self.out.mkdir(parents=True, exist_ok=True)

    def model(self) -> ModelParams:
        return model_from(self.cfg)

    def meta(self, command: str, extra: dict | None = None) -> dict[str, object]:
        m = {"command": command, "solver.tol": self.tol, "truncation.x_max": self.trunc.x_max}
        m["truncation.safety_margin"] = self.trunc.safety_margin
        m.update(self.cfg.resolved())
        if extra:
            m.update(extra)
        return m

    def write(self, name: str, columns, rows, meta) -> None:
        if self.out is not None:
            write_csv(self.out / name, columns, rows, meta)


def _verdict_line(policy: ThresholdPolicy) -> str:
    if policy.flexibility_valueless:
        return "flex=valueless Bs>=Bd+1"
    return "flex=active Bs<=Bd"


def cmd_solve(run: _Run) -> int:
    model = run.model()
    vf = solve_discounted(model, run.trunc, run.tol, max_iters=run.cfg.int("solver.max_iters", 100000),
                          method=run.cfg.str("solver.method", "accelerated"))
    pol = vf.policy(tol=run.tol)
    print(pol.describe())
    print(f"v(0,0)={fmt(vf(0, 0))} x_max={vf.x_max}")
    print(_verdict_line(pol))
    meta = run.meta("solve", {"result.Bs": fmt_threshold(pol.b_service), "result.Bd": fmt_threshold(pol.b_admission)})
    meta["model.describe"] = " ".join(f"{k}={fmt(v)}" for k, v in model.describe().items())
    run.write("values.csv", ["x", "i", "value"], value_rows(vf.values), meta)
    return EXIT_OK


def cmd_flexibility(run: _Run) -> int:
    rep = flexibility(run.model(), run.trunc, run.tol)
    p = rep.thresholds_combined
    print(f"{p.describe()} Bd_hat={fmt_threshold(rep.threshold_admission_only)}")
    label = "eps(0,0)" if rep.relative_is_absolute else "rel_flex"
    print(f"{label}={fmt(rep.relative_at_origin)}")
    print(_verdict_line(p))
    rows = [(x, i, float(rep.epsilon[x, i])) for x in range(rep.x_max + 1) for i in (0, 1)]
    run.write("epsilon.csv", ["x", "i", "epsilon"], rows, run.meta("flexibility"))
    return EXIT_OK


def _sweep_rows(rows):
    return [
        (r.value, fmt_threshold(r.b_service), fmt_threshold(r.b_admission), fmt_threshold(r.b_admission_only),
         r.relative_flexibility)
        for r in rows
    ]


def cmd_sweep(run: _Run) -> int:
    axis = run.cfg.str("sweep.axis")
    values = run.cfg.floats("sweep.values")
    try:
        rows = sweep(run.model(), axis, values, run.trunc, run.tol)
    except ValueError as exc:
        if isinstance(exc, ModelError):
            raise
        raise ConfigError(str(exc), run.cfg.line_of("sweep.axis"), "sweep.axis") from None
    cols = [axis, "Bs", "Bd", "Bd_hat", "rel_flex"]
    for r, text in zip(rows, _sweep_rows(rows)):
        note = f" error={r.error}" if r.error else ""
        note += f" violations={len(r.violations)}" if r.violations else ""
        print(",".join(fmt(c) for c in text) + note)
    run.write("sweep.csv", cols, _sweep_rows(rows), run.meta("sweep"))
    return EXIT_NUMERIC if any(r.error for r in rows) else EXIT_OK


def cmd_critical(run: _Run) -> int:
    model = run.model()
    lo = run.cfg.float("critical.R_min", 0.0)
    hi = run.cfg.float("critical.R_max", model.c_over_delta + 5.0)
    res = run.cfg.float("critical.resolution", 0.05)
    bis = run.cfg.float("critical.bisect_tol", 1e-3)
    cr = critical_reward(model, (lo, hi), res, bis, run.trunc, run.tol)
    print(f"R_tilde={fmt(cr.R_tilde)} bracket=[{fmt(cr.bracket[0])},{fmt(cr.bracket[1])}] "
          f"c_over_delta={fmt(model.c_over_delta)} crossings={cr.crossings}")
    run.write("critical_scan.csv", ["R", "verdict"], [(R, v.value) for R, v in cr.scan], run.meta("critical-r"))
    return EXIT_OK


def cmd_average(run: _Run) -> int:
    model = run.model()
    res = average_reward(
        model,
        run.trunc,
        beta0=run.cfg.float("average.beta0", 1.0),
        shrink=run.cfg.float("average.shrink", 0.5),
        stop_tol=run.cfg.float("average.stop_tol", 1e-6),
        max_stages=run.cfg.int("average.max_stages", 30),
        tol=run.tol,
        spread_tol=run.cfg.float("average.spread_tol", 1e-4),
    )
    print(f"g*={fmt(res.g_star)} {res.policy.describe()} stages={len(res.beta_sequence)} "
          f"residual={res.inequality_residual:.3e}")
    rows = [
        (b, g, s, fmt_threshold(p.b_service), fmt_threshold(p.b_admission))
        for b, g, s, p in zip(res.beta_sequence, res.g_trace, res.spread_trace, res.policy_trace)
    ]
    run.write("average_trace.csv", ["beta", "g", "spread", "Bs", "Bd"], rows, run.meta("average", {"g_star": res.g_star}))
    return EXIT_OK


def cmd_simulate(run: _Run) -> int:
    model = run.model()
    cfg = run.cfg
    seed = run.args.seed if run.args.seed is not None else cfg.int("sim.seed", 0)
    mode = cfg.str("sim.mode", "discounted").lower()
    if mode == "discounted":
        horizon = DiscountedEffective(cfg.float("sim.epsilon_tail", 1e-6))
    elif mode == "average":
        horizon = TimeAverage(cfg.float("sim.T"), cfg.float("sim.warmup", 0.1), cfg.int("sim.batches", 32))
    else:
        raise ConfigError("expected discounted or average", cfg.line_of("sim.mode"), "sim.mode")
    try:
        sim_cfg = SimConfig(seed, cfg.int("sim.replications", 10000), horizon, (cfg.int("sim.x0", 0), cfg.int("sim.i0", 0)))
    except ValueError as exc:
        raise ConfigError(str(exc), key="sim") from None
    if "sim.b_service" in cfg or "sim.b_admission" in cfg:
        policy = ThresholdPolicy(cfg.threshold("sim.b_service", math.inf), cfg.threshold("sim.b_admission", -1),
                                 Variant.COMBINED, model.reward_timing)
    elif mode == "average":
        policy = average_reward(model, run.trunc, tol=run.tol).policy
    else:
        policy = solve_discounted(model, run.trunc, run.tol).policy(tol=run.tol)
    est = (simulate_discounted if mode == "discounted" else simulate_average)(policy, model, sim_cfg)
    print(policy.describe())
    print("mean,half_width,reps")
    print(est.format())
    meta = run.meta("simulate", {"sim.seed": seed, "policy": policy.describe()})
    run.write("estimate.csv", ["mean", "half_width", "reps"], [(est.mean, est.half_width_95, est.replications_used)], meta)
    if run.out is not None and "sim.trace_T" in cfg:
        write_trace(run.out / "trace.csv", policy, model, cfg.float("sim.trace_T"), seed, sim_cfg.initial_state)
    return EXIT_OK


FIGURE_BASE = ModelParams(lam=5.0, mu_low=3.0, mu_high=5.0, c=6.0, R=4.0, beta=0.5, holding=PowerCost(1.0, 2.0))
FIGURE1_R = tuple(0.25 * k for k in range(1, 41))
FIGURE2_C = tuple(float(c) for c in range(1, 11))


def table1_rows(lam: float, trunc: TruncationSpec, tol: float, horizon: int | None = None):
    rows = []
    for ratio in DELTA_RATIOS:
        model = ModelParams(lam=lam, mu_low=REFERENCE_BASE["mu_low"],
                            mu_high=REFERENCE_BASE["mu_low"] * (1.0 + ratio), c=REFERENCE_BASE["c"],
                            R=REFERENCE_BASE["R"], beta=REFERENCE_BASE["beta"], holding=PowerCost(1.0, 2.0))
        rep = flexibility(model, trunc, tol, horizon=horizon)
        p = rep.thresholds_combined
        rows.append((ratio, p.b_service, p.b_admission, rep.threshold_admission_only, rep.relative_at_origin))
    return rows


def cmd_reproduce(run: _Run) -> int:
    tol, trunc = run.tol, run.trunc
    meta = run.meta("reproduce-paper")
    summary = []

    fig1 = sweep(FIGURE_BASE, "R", FIGURE1_R, trunc, tol)
    base_meta = {**meta, **{f"base.{k}": v for k, v in FIGURE_BASE.describe().items()}}
    run.write("figure1.csv", ["R", "Bs", "Bd", "Bd_hat", "rel_flex"], _sweep_rows(fig1), base_meta)
    bad = [r for r in fig1 if r.error or r.violations]
    summary.append(f"figure1: {len(fig1)} rows, {len(bad)} with errors or structural violations")

    fig2 = []
    below = 0
    for c in FIGURE2_C:
        model = FIGURE_BASE.replace(c=c)
        cr = critical_reward(model, (0.05, model.c_over_delta + 5.0), 0.05, 1e-3, trunc, tol)
        fig2.append((model.c_over_delta, cr.bracket[0], cr.bracket[1]))
        below += cr.bracket[0] < model.c_over_delta
    run.write("figure2.csv", ["c_over_delta", "R_tilde_low", "R_tilde_high"], fig2, base_meta)
    summary.append(f"figure2: {len(fig2)} rows, R_tilde_low >= c/delta in {len(fig2) - below}/{len(fig2)}")

    # reference relative values line up with a 100-step horizon; default is the converged solution
    horizon = run.cfg.int("reproduce.horizon", None)
    summary.append(f"table1 horizon: {'infinite' if horizon is None else horizon}")
    mismatches = 0
    for lam, ref in REFERENCE_TABLE.items():
        rows = table1_rows(lam, trunc, tol, horizon)
        name = f"table1_lambda{int(lam)}.csv"
        tmeta = {**meta, "base.lambda": lam, **{f"base.{k}": v for k, v in REFERENCE_BASE.items()},
                 "base.holding": "x^2"}
        run.write(name, ["delta_over_mul", "Bs", "Bd", "Bd_hat", "rel_flex"],
                  [(r, fmt_threshold(a), fmt_threshold(b), fmt_threshold(c), f) for r, a, b, c, f in rows], tmeta)
        for (ratio, bs, bd, bdh, rel), (rbs, rbd, rbdh, rrel) in zip(rows, ref):
            thr_ok = (bs, bd, bdh) == (rbs, rbd, rbdh)
            rel_ok = abs(rel - rrel) <= REL_FLEX_TOL
            mismatches += not thr_ok
            summary.append(
                f"lambda={fmt(lam)} delta/mu_l={fmt(ratio)}: thresholds {fmt_threshold(bs)},{fmt_threshold(bd)},"
                f"{fmt_threshold(bdh)} ref {rbs},{rbd},{rbdh} {'ok' if thr_ok else 'MISMATCH'}; "
                f"rel_flex {rel:.4f} ref {rrel:.4f} {'ok' if rel_ok else 'outside tolerance'}"
            )
    summary.append(f"threshold mismatches: {mismatches}")
    text = "\n".join(summary) + "\n"
    print(text, end="")
    if run.out is not None:
        (run.out / "summary.txt").write_text(text)
    return EXIT_MISMATCH if mismatches else EXIT_OK


HANDLERS = {
    "solve": cmd_solve,
    "flexibility": cmd_flexibility,
    "sweep": cmd_sweep,
    "critical-r": cmd_critical,
    "average": cmd_average,
    "simulate": cmd_simulate,
    "reproduce-paper": cmd_reproduce,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        run = _Run(args, cfg)
        return HANDLERS[args.command](run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FlexQueueError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
