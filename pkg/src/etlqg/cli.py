"""Command-line entry point: ``etlqg <subcommand> [flags]``.

Without ``--config`` every command runs on the Boeing 747 preset. Exit codes:
0 on success, 2 on invalid input (bad config, bad flags, refusing to
overwrite an existing file without ``--force``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .covariance import build_tables
from .lqg import solve_riccati
from .milp import build_milp, export_lp
from .model import Problem, ProblemError, boeing747_preset, dump_problem, load_problem
from .scheduler import certify, ratio_bounds, solve_bnb, solve_enumerate
from .sim import (
    Policy, aggregate_csv, fmt, frequency_csv, make_context, monte_carlo, runs_csv,
    simulate_run, sweep_p, trace_csv, csv_text,
)

SEED_ENV = "ETLQG_SEED0"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def load_instance(args) -> Problem:
    if args.config is not None:
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        prob = load_problem(path.read_text())
    else:
        prob = boeing747_preset(args.sigma2)
    if args.p is not None:
        prob = prob.with_overrides(p=args.p)
    if args.lam is not None:
        prob = prob.with_overrides(lam=args.lam)
    if args.horizon is not None:
        prob = prob.with_overrides(T=args.horizon)
    return prob


class Writer:
    def __init__(self, out: str | None, force: bool, default: str):
        self.dir = Path(out if out is not None else default)
        self.force = force

    def check(self, *names: str) -> None:
        """Refuse up front, before any work, if an output would be clobbered."""
        if self.force:
            return
        for name in names:
            if (self.dir / name).exists():
                raise UsageError(f"{self.dir / name} exists; pass --force to overwrite")

    def write(self, name: str, text: str) -> Path:
        self.check(name)
        self.dir.mkdir(parents=True, exist_ok=True)
        path = self.dir / name
        path.write_text(text)
        return path


def _window_error(prob: Problem, args) -> tuple[int, np.ndarray]:
    k = args.k
    if not 0 <= k < prob.T:
        raise UsageError(f"--k must lie in [0, {prob.T})")
    if args.es is None:
        return k, np.ones(prob.n)
    e = np.array(args.es, dtype=float)
    if e.shape != (prob.n,):
        raise UsageError(f"--es must have {prob.n} entries, got {e.size}")
    return k, e


def _theta_str(theta) -> str:
    return "".join(str(int(v)) for v in theta)


# ---------------------------------------------------------------- commands


def cmd_preset(args, prob: Problem) -> None:
    text = dump_problem(prob) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        path = Writer(args.out, args.force, ".").write("problem.json", text)
        print(path)


def cmd_riccati(args, prob: Problem) -> None:
    sol = solve_riccati(prob)
    rows = []
    for name, stack in (("P", sol.P), ("L", sol.L), ("Gamma", sol.Gamma), ("W", sol.W)):
        for k, M in enumerate(stack):
            for (i, j), v in np.ndenumerate(M):
                rows.append((name, k, i, j, float(v)))
    path = Writer(args.out, args.force, "results").write("riccati.csv", csv_text(("matrix", "k", "i", "j", "value"), rows))
    print(path)


def cmd_certify(args, prob: Problem) -> None:
    sol = solve_riccati(prob)
    k, e = _window_error(prob, args)
    out = certify(e, sol.Gamma[k], sol.W[k], prob.p, prob.lam)
    print(f"decision {out.decision.value}")
    print(f"attempt_stat {fmt(out.attempt_stat)}")
    print(f"skip_stat {fmt(out.skip_stat)}")
    print(f"lambda {fmt(out.lam)}")


def cmd_schedule(args, prob: Problem) -> None:
    sol = solve_riccati(prob)
    k, e = _window_error(prob, args)
    table = build_tables(prob, sol, k, e)
    res = solve_enumerate(table, prob.p) if args.enumerate else solve_bnb(table, prob.p)
    c = certify(e, sol.Gamma[k], sol.W[k], prob.p, prob.lam)
    print(f"schedule {_theta_str(res.schedule.theta)}")
    print(f"cost {fmt(res.cost)}")
    print(f"attempts {res.schedule.attempts}")
    print(f"nodes {res.nodes_explored}")
    print(f"proof {res.proof.value}")
    print(f"certificate {c.decision.value} attempt_stat {fmt(c.attempt_stat)} skip_stat {fmt(c.skip_stat)}")


def cmd_export_milp(args, prob: Problem) -> None:
    if prob.p >= 1.0:
        raise UsageError("export-milp needs p in (0,1); p=1 is not supported by the selector model")
    sol = solve_riccati(prob)
    k, e = _window_error(prob, args)
    model = build_milp(build_tables(prob, sol, k, e), prob.p)
    path = Writer(args.out, args.force, "results").write(f"window_k{k}.lp", export_lp(model))
    print(path)


def cmd_simulate(args, prob: Problem) -> None:
    policy = Policy.parse(args.policy)
    seed = args.seed if args.seed is not None else _default_seed()
    name = f"trace_{policy.value}_seed{seed}.csv"
    writer = Writer(args.out, args.force, "results")
    writer.check(name)
    run = simulate_run(prob, None, policy, seed)
    print(writer.write(name, trace_csv(run)))
    print(f"lqg_cost {fmt(run.lqg_cost)} comm_cost {fmt(run.comm_cost)} total {fmt(run.total)} "
          f"attempts {run.attempts} successes {run.successes}")


def _policies(args) -> list[Policy]:
    return [Policy.parse(args.policy)] if args.policy else [Policy.MPC, Policy.ONESHOT]


def cmd_montecarlo(args, prob: Problem) -> None:
    seed0 = args.seed if args.seed is not None else _default_seed()
    writer = Writer(args.out, args.force, "results")
    writer.check("aggregate.csv", "runs.csv")
    ctx = make_context(prob)
    stats, runs = [], []
    for policy in _policies(args):
        s, r = monte_carlo(prob, ctx.sol, policy, args.seeds, seed0, args.jobs, ctx)
        stats.append(s)
        runs.extend(r)
    print(writer.write("aggregate.csv", aggregate_csv(stats)))
    print(writer.write("runs.csv", runs_csv(runs)))


def cmd_sweep_p(args, prob: Problem) -> None:
    seed0 = args.seed if args.seed is not None else _default_seed()
    writer = Writer(args.out, args.force, "results")
    writer.check("sweep_p.csv")
    points = sweep_p(prob, args.pgrid, args.seeds, seed0, args.jobs)
    stats = [s for pt in points for s in (pt.mpc, pt.oneshot)]
    print(writer.write("sweep_p.csv", aggregate_csv(stats)))


TABLE1_HEADER = ("policy", "seed", "lqg_cost", "comm_cost", "total", "attempts", "successes")


def cmd_bench747(args, prob: Problem) -> None:
    seed0 = args.seed if args.seed is not None else _default_seed()
    writer = Writer(args.out, args.force, "results")
    files = ("table1.csv", "table2.csv", "attempts_over_time.csv", "runs.csv")
    writer.check(*files)
    ctx = make_context(prob)
    mpc, mpc_runs = monte_carlo(prob, ctx.sol, Policy.MPC, args.seeds, seed0, args.jobs, ctx)
    one, one_runs = monte_carlo(prob, ctx.sol, Policy.ONESHOT, args.seeds, seed0, args.jobs, ctx)
    # single-run comparison on the first seed
    table1 = [
        (r.policy.value, r.seed, r.lqg_cost, r.comm_cost, r.total, r.attempts, r.successes)
        for r in (one_runs[0], mpc_runs[0])
    ]
    print(writer.write("table1.csv", csv_text(TABLE1_HEADER, table1)))
    print(writer.write("table2.csv", aggregate_csv([one, mpc])))
    print(writer.write("attempts_over_time.csv", frequency_csv(one, mpc)))
    print(writer.write("runs.csv", runs_csv(one_runs + mpc_runs)))
    wins = sum(a.total < b.total for a, b in zip(mpc_runs, one_runs))
    print(f"mpc mean_total {fmt(mpc.mean_total)} mean_attempts {fmt(mpc.mean_attempts)}")
    print(f"oneshot mean_total {fmt(one.mean_total)} mean_attempts {fmt(one.mean_attempts)}")
    print(f"mpc wins {wins}/{args.seeds}")


def cmd_bounds(args, prob: Problem) -> None:
    sol = solve_riccati(prob)
    k, e = _window_error(prob, args)
    table = build_tables(prob, sol, k, e)
    solver = solve_enumerate if args.enumerate else solve_bnb
    th1 = solver(table, 1.0).schedule
    thp = solver(table, prob.p).schedule
    rb = ratio_bounds(th1, thp, table, prob.p)
    print(f"theta_star_1 {_theta_str(th1.theta)}")
    print(f"theta_star_p {_theta_str(thp.theta)}")
    print(f"lower {fmt(rb.lower)}")
    print(f"ratio {fmt(rb.ratio)}")
    print(f"upper {fmt(rb.upper)}")
    print(f"C_max {rb.C_max}")


COMMANDS = {
    "preset": (cmd_preset, "print the Boeing 747 instance as a config file"),
    "riccati": (cmd_riccati, "write P, L, Gamma and W as riccati.csv"),
    "certify": (cmd_certify, "one-step attempt/skip test for an innovation"),
    "schedule": (cmd_schedule, "solve one planning window exactly"),
    "export-milp": (cmd_export_milp, "write the window MILP as an LP file"),
    "simulate": (cmd_simulate, "one closed-loop run, per-step trace CSV"),
    "montecarlo": (cmd_montecarlo, "many seeds, aggregate and per-run CSVs"),
    "sweep-p": (cmd_sweep_p, "both policies over a grid of success probabilities"),
    "bench747": (cmd_bench747, "full Boeing 747 comparison of both policies"),
    "bounds": (cmd_bounds, "ratio bounds of the lossy optimum against the lossless one"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="problem JSON (default: Boeing 747 preset)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--p", type=float, help="override the channel success probability")
    common.add_argument("--lambda", dest="lam", type=float, help="override the attempt penalty")
    common.add_argument("--horizon", type=int, help="override the horizon T")
    common.add_argument("--sigma2", type=float, default=1.0, help="process-noise level of the preset")

    window = _Parser(add_help=False)
    window.add_argument("--k", type=int, default=0, help="window start")
    window.add_argument("--es", type=_floats, help="innovation, comma separated (default: all ones)")

    runs = _Parser(add_help=False)
    runs.add_argument("--seed", type=int, help=f"(base) seed; default ${SEED_ENV} or 0")
    runs.add_argument("--seeds", type=int, default=100, help="number of seeds")
    runs.add_argument("--jobs", type=int, default=1, help="worker processes")
    runs.add_argument("--policy", choices=["mpc", "oneshot"], help="restrict to one policy")

    parser = _Parser(prog="etlqg", description="Event-triggered LQG scheduling over an erasure channel.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        parents = [common]
        if name in ("certify", "schedule", "export-milp", "bounds"):
            parents.append(window)
        if name in ("simulate", "montecarlo", "sweep-p", "bench747"):
            parents.append(runs)
        sp = sub.add_parser(name, parents=parents, help=help_text)
        if name in ("schedule", "bounds"):
            sp.add_argument("--enumerate", action="store_true", help="use exhaustive enumeration")
        if name == "sweep-p":
            sp.add_argument("--pgrid", type=_floats, default=[0.3, 0.5, 0.7, 0.9], help="comma-separated p values")
    return parser


def _validate(args) -> None:
    if getattr(args, "seeds", 1) < 1:
        raise UsageError("--seeds must be at least 1")
    if getattr(args, "jobs", 1) < 1:
        raise UsageError("--jobs must be at least 1")
    if args.command == "simulate" and args.policy is None:
        args.policy = "mpc"
    for p in getattr(args, "pgrid", None) or []:
        if not 0.0 < p <= 1.0:
            raise UsageError("--pgrid values must lie in (0,1]")


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _validate(args)
        prob = load_instance(args)
        COMMANDS[args.command][0](args, prob)
    except (UsageError, ProblemError) as exc:
        print(f"etlqg: error: {exc}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"etlqg: error: {exc}", file=sys.stderr)
        return 2
    return 0


def run_cli(argv: Sequence[str]) -> int:
    return main(list(argv))
