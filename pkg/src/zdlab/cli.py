"""Command-line entry point ``zdlab``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import datetime, timezone

from . import checks
from .config import (
    ConfigError,
    emit_results,
    fmt,
    parse_config,
    parse_weak_config,
    read_point_cloud,
    snapshot_csv,
)
from .dynamics import simulate_pair, snapshots_to_rows
from .montecarlo import derive_seed, fit_growth, run_experiment, weak_error_study
from .transport import bottleneck_w_inf_sq

log = logging.getLogger("zdlab")

GROWTH_SNAPSHOTS = [k / 32 for k in range(33)]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _floats(text: str | None):
    if text is None:
        return None
    return [float(v) for v in text.split(",") if v.strip()]


def _overrides(args) -> dict:
    ov = {
        "domain": args.domain,
        "potential": args.potential,
        "epsilon": args.epsilon,
        "N": args.N,
        "M": getattr(args, "M", None),
        "master_seed": args.seed,
        "T": args.T,
        "snapshot_times": _floats(args.snapshot_times),
    }
    if getattr(args, "nu", None) is not None:
        ov["nu_list"] = [args.nu]
    if getattr(args, "dt", None) is not None:
        ov["dt_rule"] = {"kind": "fixed", "dt": args.dt}
    return ov


def _report(results: list[checks.Check], check: bool) -> int:
    for c in results:
        print(c.line())
    return 1 if check and not all(c.passed for c in results) else 0


def _progress(done: int, total: int):
    if done == total or done % max(1, total // 20) == 0:
        log.info("samples %d/%d", done, total)


def cmd_convergence(args) -> int:
    cfg = parse_config(args.config, _overrides(args))
    started = _now()
    result = run_experiment(cfg.plan, progress=_progress)
    fits: dict = {}
    results: list[checks.Check] = []
    by_time = {}
    for t in cfg.plan.snapshot_times:
        if t == 0:
            continue
        try:
            fit = checks.rate_at(result, t, cfg.nu_threshold)
        except ValueError as exc:
            log.warning("no rate fit at t=%s: %s", t, exc)
            continue
        by_time[fmt(t)] = fit.to_dict()
        if t == cfg.fit_time:
            fits["power_law"] = fit
            results.append(checks.check_rate(fit, f"rate at t={t:g}"))
    fits["power_law_by_time"] = by_time
    results.append(checks.check_envelope(result))
    emit_results(args.out, result.series, fits, {
        "command": "convergence", "plan": cfg.to_dict(), "master_seed": cfg.plan.master_seed,
        "started": started, "finished": _now(), "failures": result.failures,
    })
    return _report(results, args.check)


def cmd_growth(args) -> int:
    cfg = parse_config(args.config, _overrides(args),
                       defaults={"snapshot_times": GROWTH_SNAPSHOTS, "nu_list": [2.0**-28]})
    if len(cfg.plan.nu_list) != 1:
        raise ConfigError("growth needs exactly one diffusion value (use --nu)")
    started = _now()
    result = run_experiment(cfg.plan, progress=_progress)
    cells = [c for c in result.series if c.time > 0]
    times = [c.time for c in cells]
    means = [c.mean_w_sq for c in cells]
    fit = fit_growth(times, means)
    emit_results(args.out, result.series, {"growth": fit}, {
        "command": "growth", "plan": cfg.to_dict(), "master_seed": cfg.plan.master_seed,
        "started": started, "finished": _now(), "failures": result.failures,
    })
    return _report(checks.check_growth(fit, means, cfg.plan.potential), args.check)


def cmd_weak_error(args) -> int:
    ov = {
        "domain": args.domain, "potential": args.potential, "epsilon": args.epsilon,
        "nu": args.nu, "N": args.N, "T": args.T, "dt_list": _floats(args.dt_list),
        "fine_dt": args.fine_dt, "samples": args.samples, "master_seed": args.seed,
    }
    plan = parse_weak_config(args.config, ov)
    started = _now()
    res = weak_error_study(plan.domain, plan.potential, plan.nu, plan.N, plan.T, plan.dt_list,
                           plan.fine_dt, plan.samples, plan.init_region, plan.master_seed)
    rows = ["dt,mean_g,weak_error,ci_half_width,samples"]
    for dt, m, e, ci in zip(res.dt_list, res.means, res.errors, res.error_ci):
        rows.append(f"{fmt(dt)},{fmt(m)},{fmt(e)},{fmt(ci)},{res.samples}")
    rows.append(f"{fmt(res.fine_dt)},{fmt(res.fine_mean)},0,0,{res.samples}")
    fits = {"power_law": res.fit.to_dict() if res.fit else None}
    emit_results(args.out, None, fits, {
        "command": "weak-error", "plan": plan.to_dict(), "master_seed": plan.master_seed,
        "started": started, "finished": _now(),
    }, extra={"weak_error.csv": "\n".join(rows) + "\n"})
    return _report([checks.check_weak(res)], args.check)


def cmd_simulate(args) -> int:
    # M is unused here; 2 keeps plan validation happy
    cfg = parse_config(args.config, _overrides(args), defaults={
        "M": 2, "nu_list": [2.0**-16], "dt_rule": {"kind": "fixed", "dt": 2.0**-8},
        "snapshot_times": [0.0, 1.0],
    })
    plan = cfg.plan
    nu = plan.nu_list[0]
    snaps = simulate_pair(plan.domain, plan.potential, plan.N, nu, plan.dt_rule.dt(nu),
                          plan.snapshot_times, plan.init_region,
                          derive_seed(plan.master_seed, 0, args.traj))
    text = snapshot_csv(snapshots_to_rows(snaps, args.traj), plan.d)
    summary = {fmt(s.time): bottleneck_w_inf_sq(s.stochastic, s.deterministic).bottleneck_sq for s in snaps}
    emit_results(args.out, None, None, {
        "command": "simulate", "plan": cfg.to_dict(), "master_seed": plan.master_seed,
        "traj_id": args.traj, "w_inf_sq": summary, "started": _now(),
    }, extra={"snapshots.csv": text})
    print(json.dumps({"w_inf_sq": summary}))
    return 0


def cmd_wasserstein(args) -> int:
    X = read_point_cloud(args.a)
    Y = read_point_cloud(args.b)
    res = bottleneck_w_inf_sq(X, Y)
    print(json.dumps({"w_inf_sq": res.bottleneck_sq}))
    return 0


def _common(p: argparse.ArgumentParser, out: bool = True):
    p.add_argument("--config", help="JSON config file")
    if out:
        p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--domain", choices=["half_plane", "disk"])
    p.add_argument("--potential", choices=["K2", "K32"])
    p.add_argument("--epsilon", type=float)
    p.add_argument("--N", type=int)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--T", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="zdlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convergence", help="E[W_inf^2] versus nu and the O(nu) rate fit")
    _common(p)
    p.add_argument("--M", type=int)
    p.add_argument("--snapshot-times")
    p.add_argument("--check", action="store_true", help="exit nonzero if an acceptance check fails")
    p.set_defaults(func=cmd_convergence, nu=None, dt=None)

    p = sub.add_parser("growth", help="E[W_inf^2] versus time at fixed nu, growth-curve fit")
    _common(p)
    p.add_argument("--M", type=int)
    p.add_argument("--nu", type=float)
    p.add_argument("--dt", type=float, help="fixed time step (default dt = sqrt(nu))")
    p.add_argument("--snapshot-times")
    p.add_argument("--check", action="store_true")
    p.set_defaults(func=cmd_growth)

    p = sub.add_parser("weak-error", help="weak convergence of the reflected Euler scheme")
    _common(p)
    p.add_argument("--nu", type=float)
    p.add_argument("--dt-list")
    p.add_argument("--fine-dt", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--check", action="store_true")
    p.set_defaults(func=cmd_weak_error)

    p = sub.add_parser("simulate", help="one coupled trajectory, snapshot dump")
    _common(p)
    p.add_argument("--nu", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--snapshot-times")
    p.add_argument("--traj", type=int, default=0, help="trajectory index (selects the seed)")
    p.set_defaults(func=cmd_simulate, M=None)

    p = sub.add_parser("wasserstein", help="squared W_inf between two point-cloud CSVs")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=cmd_wasserstein)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, OSError) as exc:
        print(f"zdlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
