"""Closed-loop simulation of the scheduled LQG loop over an erasure channel.

Randomness: every run draws from three Philox generators keyed by
``SeedSequence([seed, stream])`` with streams 0 (initial state), 1 (process
noise) and 2 (channel). A channel uniform ``u_k`` is drawn at every step and a
packet sent at ``k`` is delivered iff ``u_k < p``, so two policies run on the
same seed see the same initial state, the same noise path and the same channel
realization.
"""

from __future__ import annotations

import csv
import enum
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .covariance import build_tables, noise_gramians
from .lqg import RiccatiSolution, solve_riccati
from .model import Problem
from .scheduler import Decision, DualBound, certify, solve_bnb

STREAM_X0, STREAM_NOISE, STREAM_CHANNEL = 0, 1, 2


class Policy(enum.Enum):
    MPC = "mpc"
    ONESHOT = "oneshot"

    @classmethod
    def parse(cls, value: "Policy | str") -> "Policy":
        if isinstance(value, Policy):
            return value
        try:
            return cls(str(value).lower().replace("-", "").replace("_", ""))
        except ValueError:
            raise ValueError(f"unknown policy {value!r}; use mpc or oneshot") from None


@dataclass(frozen=True, eq=False)
class SimContext:
    """Per-instance data shared by all runs: gains, noise table, fitted bound."""

    prob: Problem
    sol: RiccatiSolution
    noise: np.ndarray
    dual: DualBound | None


def make_context(prob: Problem, sol: RiccatiSolution | None = None, dual_iters: int = 1500) -> SimContext:
    sol = solve_riccati(prob) if sol is None else sol
    noise = noise_gramians(prob, sol)
    dual = DualBound.fit(noise, prob.p, prob.lam, iters=dual_iters) if prob.T > 1 else None
    return SimContext(prob, sol, noise, dual)


def stream(seed: int, which: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), which])))


def psd_sqrt(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


@dataclass(frozen=True, eq=False)
class RunRecord:
    seed: int
    policy: Policy
    x: np.ndarray  # (T+1, n)
    u: np.ndarray  # (T, m)
    theta: np.ndarray  # (T,)
    delta: np.ndarray  # (T,)
    e_s: np.ndarray  # (T, n) innovation seen by the scheduler
    err: np.ndarray  # (T, n) controller error x_k - xhat_k
    cert: tuple[str, ...]  # per step: "skip", "attempt" or "milp"
    stage_cost: np.ndarray  # (T,), terminal cost folded into the last entry
    lqg_cost: float
    comm_cost: float
    total: float
    nodes: int

    @property
    def attempts(self) -> int:
        return int(self.theta.sum())

    @property
    def successes(self) -> int:
        return int((self.theta * self.delta).sum())

    @property
    def certificate_hits(self) -> tuple[int, int, int]:
        return (self.cert.count("skip"), self.cert.count("attempt"), self.cert.count("milp"))


def simulate_run(
    prob: Problem,
    sol: RiccatiSolution | None,
    policy: Policy | str,
    seed: int,
    use_certificates: bool = True,
    context: SimContext | None = None,
) -> RunRecord:
    policy = Policy.parse(policy)
    if context is None:
        context = make_context(prob, sol)
    sol = context.sol
    A, B, T, n, m, p, lam = prob.A, prob.B, prob.T, prob.n, prob.m, prob.p, prob.lam

    x0 = prob.x0_mean + psd_sqrt(prob.Sigma_0) @ stream(seed, STREAM_X0).standard_normal(n)
    w = stream(seed, STREAM_NOISE).standard_normal((T, n)) @ psd_sqrt(prob.Sigma_w).T
    channel = stream(seed, STREAM_CHANNEL).random(T)

    x = np.zeros((T + 1, n))
    u = np.zeros((T, m))
    theta = np.zeros(T, dtype=np.int64)
    delta = np.zeros(T, dtype=np.int64)
    e_hist = np.zeros((T, n))
    err = np.zeros((T, n))
    stage = np.zeros(T)
    cert: list[str] = []
    nodes = 0
    plan: tuple[int, ...] | None = None
    plan_start = 0

    x[0] = x0
    prior = prob.x0_mean.copy()
    for k in range(T):
        e_s = x[k] - prior
        e_hist[k] = e_s
        label = "milp"
        if policy is Policy.ONESHOT:
            if k == 0:
                res = solve_bnb(build_tables(prob, sol, 0, e_s, context.noise), p, dual=context.dual)
                plan, nodes = res.schedule.theta, res.nodes_explored
            a = plan[k]
        else:
            decision = Decision.AMBIGUOUS
            if use_certificates:
                decision = certify(e_s, sol.Gamma[k], sol.W[k], p, lam).decision
            if decision is Decision.ATTEMPT:
                a, label = 1, "attempt"
            elif decision is Decision.SKIP:
                a, label = 0, "skip"
            else:
                # warm start from what is left of the last plan
                hint = plan[k - plan_start:] if plan is not None else None
                res = solve_bnb(build_tables(prob, sol, k, e_s, context.noise), p, incumbent_hint=hint, dual=context.dual)
                plan, plan_start = res.schedule.theta, k
                nodes += res.nodes_explored
                a = plan[0]
        cert.append(label)
        theta[k] = a
        delta[k] = int(a == 1 and channel[k] < p)
        xhat = x[k].copy() if delta[k] else prior
        err[k] = x[k] - xhat
        u[k] = -sol.L[k] @ xhat
        stage[k] = x[k] @ prob.Q @ x[k] + u[k] @ prob.R @ u[k]
        x[k + 1] = A @ x[k] + B @ u[k] + w[k]
        prior = A @ xhat + B @ u[k]
    stage[T - 1] += x[T] @ prob.Q_T @ x[T]

    lqg_cost = float(stage.sum())
    if prob.lam_split is None:
        comm_cost = lam * float(theta.sum())
    else:
        lam_fail, lam_success = prob.lam_split
        comm_cost = float(np.sum(theta * np.where(delta == 1, lam_success, lam_fail)))
    return RunRecord(
        seed=int(seed), policy=policy, x=x, u=u, theta=theta, delta=delta, e_s=e_hist,
        err=err, cert=tuple(cert), stage_cost=stage, lqg_cost=lqg_cost,
        comm_cost=comm_cost, total=lqg_cost + comm_cost, nodes=nodes,
    )


@dataclass(frozen=True, eq=False)
class AggregateStats:
    policy: Policy
    p: float
    n_seeds: int
    mean_successes: float
    std_successes: float
    mean_attempts: float
    std_attempts: float
    mean_comm: float
    std_comm: float
    mean_lqg: float
    std_lqg: float
    mean_total: float
    std_total: float
    attempt_freq: np.ndarray  # fraction of runs attempting at each step


def aggregate(runs: Sequence[RunRecord], p: float) -> AggregateStats:
    """Population statistics (``ddof=0``) over runs, in the order given."""
    if not runs:
        raise ValueError("no runs to aggregate")
    policies = {r.policy for r in runs}
    if len(policies) != 1:
        raise ValueError("runs mix policies")

    def ms(values):
        arr = np.array(values, dtype=float)
        return float(arr.mean()), float(arr.std())

    succ, att = ms([r.successes for r in runs]), ms([r.attempts for r in runs])
    comm, lqg = ms([r.comm_cost for r in runs]), ms([r.lqg_cost for r in runs])
    tot = ms([r.total for r in runs])
    freq = np.mean([r.theta for r in runs], axis=0)
    return AggregateStats(
        policy=runs[0].policy, p=float(p), n_seeds=len(runs),
        mean_successes=succ[0], std_successes=succ[1], mean_attempts=att[0], std_attempts=att[1],
        mean_comm=comm[0], std_comm=comm[1], mean_lqg=lqg[0], std_lqg=lqg[1],
        mean_total=tot[0], std_total=tot[1], attempt_freq=freq,
    )


def _run_job(args) -> RunRecord:
    context, policy, seed, use_certificates = args
    return simulate_run(context.prob, context.sol, policy, seed, use_certificates, context)


def run_seeds(
    context: SimContext,
    policy: Policy | str,
    seeds: Iterable[int],
    jobs: int = 1,
    use_certificates: bool = True,
) -> list[RunRecord]:
    """Runs in seed order; with ``jobs > 1`` they execute in worker processes."""
    policy = Policy.parse(policy)
    tasks = [(context, policy, int(s), use_certificates) for s in seeds]
    if jobs <= 1 or len(tasks) <= 1:
        return [_run_job(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_job, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def monte_carlo(
    prob: Problem,
    sol: RiccatiSolution | None,
    policy: Policy | str,
    n_seeds: int,
    seed0: int = 0,
    jobs: int = 1,
    context: SimContext | None = None,
) -> tuple[AggregateStats, list[RunRecord]]:
    if n_seeds < 1:
        raise ValueError("n_seeds must be at least 1")
    context = make_context(prob, sol) if context is None else context
    runs = run_seeds(context, policy, range(seed0, seed0 + n_seeds), jobs)
    return aggregate(runs, prob.p), runs


@dataclass(frozen=True, eq=False)
class SweepPoint:
    p: float
    mpc: AggregateStats
    oneshot: AggregateStats
    mpc_runs: list[RunRecord]
    oneshot_runs: list[RunRecord]


def sweep_p(
    prob: Problem,
    p_grid: Sequence[float],
    n_seeds: int,
    seed0: int = 0,
    jobs: int = 1,
) -> list[SweepPoint]:
    """Both policies at each channel success probability, on the same seeds."""
    sol = solve_riccati(prob)
    out = []
    for p in p_grid:
        pp = prob.with_overrides(p=float(p))
        ctx = make_context(pp, sol)
        mpc, mpc_runs = monte_carlo(pp, sol, Policy.MPC, n_seeds, seed0, jobs, ctx)
        one, one_runs = monte_carlo(pp, sol, Policy.ONESHOT, n_seeds, seed0, jobs, ctx)
        out.append(SweepPoint(float(p), mpc, one, mpc_runs, one_runs))
    return out


# ---------------------------------------------------------------- CSV output


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


TRACE_HEADER = ("k", "theta", "delta", "cert", "e_s_norm", "err_norm", "u_norm", "stage_cost")
AGGREGATE_HEADER = (
    "policy", "p", "n_seeds", "mean_attempts", "std_attempts", "mean_successes",
    "mean_comm", "mean_lqg", "mean_total", "std_total",
)
FREQUENCY_HEADER = ("k", "frac_attempt_oneshot", "frac_attempt_mpc")
RUNS_HEADER = (
    "seed", "policy", "attempts", "successes", "comm_cost", "lqg_cost", "total",
    "cert_skip", "cert_attempt", "cert_milp",
)


def trace_csv(run: RunRecord) -> str:
    rows = (
        (k, int(run.theta[k]), int(run.delta[k]), run.cert[k], float(np.linalg.norm(run.e_s[k])),
         float(np.linalg.norm(run.err[k])), float(np.linalg.norm(run.u[k])), float(run.stage_cost[k]))
        for k in range(run.theta.size)
    )
    return csv_text(TRACE_HEADER, rows)


def aggregate_csv(stats: Iterable[AggregateStats]) -> str:
    rows = (
        (s.policy.value, s.p, s.n_seeds, s.mean_attempts, s.std_attempts, s.mean_successes,
         s.mean_comm, s.mean_lqg, s.mean_total, s.std_total)
        for s in stats
    )
    return csv_text(AGGREGATE_HEADER, rows)


def frequency_csv(oneshot: AggregateStats, mpc: AggregateStats) -> str:
    rows = ((k, float(a), float(b)) for k, (a, b) in enumerate(zip(oneshot.attempt_freq, mpc.attempt_freq)))
    return csv_text(FREQUENCY_HEADER, rows)


def runs_csv(runs: Iterable[RunRecord]) -> str:
    rows = (
        (r.seed, r.policy.value, r.attempts, r.successes, r.comm_cost, r.lqg_cost, r.total, *r.certificate_hits)
        for r in runs
    )
    return csv_text(RUNS_HEADER, rows)
