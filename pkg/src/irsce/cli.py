"""Command-line interface.

Verbs:
  plan      minimum-pilot-length table over a (K, M) grid at fixed N
  run       Monte-Carlo MSE campaign, results to CSV
  schedule  dump a scheme's pilot/reflection schedule to CSV
  selftest  run the built-in invariant suite
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .config import ScenarioConfig, load_config
from .harness import (
    TAG_SCHEDULE,
    build_context,
    emit_csv,
    run_campaign,
    substream,
)
from .metrics import pilot_length_table
from .schedule import (
    Schedule,
    concat_schedules,
    phase2_reflections_random,
    phase2_schedule,
    schedule_to_csv,
)
from .selftest import run_selftest


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig().validate()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "trials", None) is not None:
        overrides["trials"] = args.trials
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = args.threads
    if getattr(args, "scheme", None):
        overrides["schemes"] = tuple(s.strip() for s in args.scheme.split(","))
    if overrides:
        cfg = replace(cfg, **overrides).validate()
    return cfg


def _cmd_plan(args) -> int:
    cfg = _load(args)
    n = args.n if args.n is not None else cfg.N
    k_values = range(1, args.k_max + 1)
    m_values = [int(m) for m in args.m.split(",")]
    table = pilot_length_table(n, k_values, m_values)
    lines = ["K,M,proposed,benchmark"]
    lines += [f"{K},{M},{prop},{bench}" for K, M, prop, bench in table]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def _cmd_run(args) -> int:
    cfg = _load(args)
    rows = run_campaign(cfg)
    emit_csv(rows, args.out, include_timing=args.timing)
    for row in rows:
        print(f"{row.scheme}: e2={row.e2:.6g} e3={row.e3:.6g} e_total={row.e_total:.6g}")
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def _cmd_schedule(args) -> int:
    cfg = _load(args)
    scheme = cfg.schemes[0]
    ctx = build_context(cfg, scheme)
    K, N = ctx.dims.K, ctx.dims.N
    sched1 = Schedule(ctx.pilots1, np.zeros((N, ctx.plan.tau1)))
    refl2 = ctx.refl2 if ctx.refl2 is not None else phase2_reflections_random(
        N, ctx.plan.tau2, substream(cfg.seed, ctx.skey, 0, 0, TAG_SCHEDULE))
    sched2 = phase2_schedule(K, refl2)
    phases = {"1": sched1, "2": sched2, "3": ctx.sched3}
    sched = phases[args.phase] if args.phase != "all" else concat_schedules(sched1, sched2, ctx.sched3)
    schedule_to_csv(sched, args.out)
    print(f"wrote {scheme} phase-{args.phase} schedule "
          f"(tau1={ctx.plan.tau1}, tau2={ctx.plan.tau2}, tau3={ctx.plan.tau3}) to {args.out}")
    return 0


def _cmd_selftest(args) -> int:
    results = run_selftest(verbose=True)
    return 0 if all(ok for _, ok, _ in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irsce", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    plan = sub.add_parser("plan", help="minimum pilot-length table")
    plan.add_argument("--config", default=None)
    plan.add_argument("--n", type=int, default=None, help="IRS elements (default: config N)")
    plan.add_argument("--k-max", type=int, default=16)
    plan.add_argument("--m", default="8,32", help="comma-separated antenna counts")
    plan.add_argument("--out", default=None)
    plan.set_defaults(fn=_cmd_plan)

    run = sub.add_parser("run", help="Monte-Carlo MSE campaign")
    run.add_argument("--config", default=None)
    run.add_argument("--out", default="results.csv")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--trials", type=int, default=None)
    run.add_argument("--scheme", default=None, help="comma-separated scheme ids")
    run.add_argument("--threads", type=int, default=None)
    run.add_argument("--timing", action="store_true", help="append a wallclock_s column")
    run.set_defaults(fn=_cmd_run)

    sched = sub.add_parser("schedule", help="dump a schedule to CSV")
    sched.add_argument("--config", default=None)
    sched.add_argument("--scheme", default=None)
    sched.add_argument("--phase", choices=("1", "2", "3", "all"), default="all")
    sched.add_argument("--out", default="schedule.csv")
    sched.set_defaults(fn=_cmd_schedule)

    st = sub.add_parser("selftest", help="run the invariant suite")
    st.set_defaults(fn=_cmd_selftest)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - single machine-parsable error line
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
