"""Attempt/skip decisions for one planning window.

Three tools live here:

* :func:`certify` gives a one-step answer from two quadratic forms of the
  innovation when it can, and says ``Ambiguous`` otherwise.
* :func:`solve_bnb` minimizes the closed-form window cost exactly by
  depth-first branch and bound; :func:`solve_enumerate` is the brute-force
  oracle it is tested against.
* :func:`ratio_bounds` brackets the lossy optimum relative to the lossless one.

Branch-and-bound state: after fixing ``theta_k .. theta_{j-1}``, every stage
term whose source column is ``tau <= j`` has the same future, because its
survival factor only grows with attempts at ``j, j+1, ...``. Those columns are
summed into one weight vector ``v`` over ``t = j .. T-1``; deciding
``theta_j`` costs ``beta^theta_j * v[0] + lam * theta_j`` and the child state
is ``beta^theta_j * v[1:]`` plus the fresh noise column ``j + 1``.

Two lower bounds are combined at every node. The simple one sets every
remaining slot to attempt and charges no penalty for it. The stronger one
(:class:`DualBound`) splits each slot's penalty among the columns still able
to profit from it, solves every column on its own with those prices, and sums
the column optima. Any non-negative split that adds up to ``lam`` per slot
gives a valid bound; the split is tuned once per instance by a projected
subgradient method, which only affects how much of the tree gets pruned.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .covariance import (
    GramianTable,
    Schedule,
    as_schedule,
    batch_costs,
    enumerate_schedules,
    interval_counts,
    schedule_code,
    schedule_cost,
    survival_factors,
)

ENUM_MAX_H = 22
# Survival factors below this are treated as zero inside the dual bound only.
CAP_EPS = 1e-12
TIE_RTOL = 1e-12


class Decision(enum.Enum):
    ATTEMPT = "attempt"
    SKIP = "skip"
    AMBIGUOUS = "ambiguous"


class Proof(enum.Enum):
    OPTIMAL = "optimal"
    ENUMERATED = "enumerated"


@dataclass(frozen=True)
class CertificateOutcome:
    decision: Decision
    attempt_stat: float
    skip_stat: float
    lam: float


def certify(e_s: np.ndarray, Gamma_k: np.ndarray, W_k: np.ndarray, p: float, lam: float) -> CertificateOutcome:
    """One-step test on the innovation ``e_s``.

    Attempting at ``k`` instead of skipping saves between ``p e'Gamma_k e``
    and ``p e'W_k e`` in expected error cost, whatever the rest of the window
    does. If even the smaller saving covers ``lam`` the attempt is optimal; if
    the larger one does not, skipping is. Boundary ties go to the certificate.
    """
    e = np.asarray(e_s, dtype=float)
    attempt_stat = float(p * (e @ Gamma_k @ e))
    skip_stat = float(p * (e @ W_k @ e))
    if attempt_stat >= lam:
        decision = Decision.ATTEMPT
    elif skip_stat <= lam:
        decision = Decision.SKIP
    else:
        decision = Decision.AMBIGUOUS
    return CertificateOutcome(decision, attempt_stat, skip_stat, float(lam))


@dataclass(frozen=True)
class SolveResult:
    schedule: Schedule
    cost: float
    nodes_explored: int
    proof: Proof


# ---------------------------------------------------------------- enumeration


def solve_enumerate(table: GramianTable, p: float, max_h: int = ENUM_MAX_H, chunk: int = 1 << 14) -> SolveResult:
    """Exhaustive minimum over all ``2**H`` schedules.

    Costs within a relative ``1e-12`` of the minimum count as tied; ties go to
    fewer attempts, then the smallest code with ``theta_k`` as the high bit.
    """
    H = table.H
    if H > max_h:
        raise ValueError(f"enumeration refused: H={H} exceeds budget {max_h}")
    total = 1 << H
    costs = np.empty(total)
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        costs[start:stop] = batch_costs(table, enumerate_schedules(H, start, stop), p)
    best = costs.min()
    tied = np.flatnonzero(costs <= best + TIE_RTOL * abs(best))
    attempts = np.array([bin(int(c)).count("1") for c in tied])
    code = int(tied[np.lexsort((tied, attempts))[0]])
    sched = Schedule(tuple(enumerate_schedules(H, code, code + 1)[0]))
    return SolveResult(sched, schedule_cost(table, sched, p), total, Proof.ENUMERATED)


# ---------------------------------------------------------------- dual bound


def count_cap(p: float, H: int) -> int:
    """Largest attempt count whose survival factor is kept in the dual bound."""
    if p >= 1.0:
        return 0
    beta = 1.0 - p
    return int(min(H, math.ceil(math.log(CAP_EPS) / math.log(beta))))


def _capped_factors(p: float, cap: int) -> np.ndarray:
    # entries 0..cap are exact, cap+1 is the absorbing state with factor 0
    out = np.zeros(cap + 2)
    out[: cap + 1] = survival_factors(p, cap)
    return out


def column_value(v: np.ndarray, prices: np.ndarray, factors: np.ndarray) -> float:
    """Cheapest way to serve one column alone.

    The column pays ``factors[c] * v[s]`` at each slot ``s`` (``c`` = its
    attempts so far, capped) and ``prices[s]`` for every attempt it buys.
    """
    cap = factors.size - 2
    V = np.zeros(cap + 2)
    skip_f, att_f = factors[: cap + 1], factors[1:]
    for s in range(v.size - 1, -1, -1):
        skip = v[s] * skip_f + V[: cap + 1]
        att = prices[s] + v[s] * att_f + V[1:]
        np.minimum(skip, att, out=V[: cap + 1])
    return float(V[0])


def _all_columns(g: np.ndarray, alpha: np.ndarray, factors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve every column ``tau`` of ``g`` at once; return values and plans."""
    N = g.shape[0]
    cap = factors.size - 2
    V = np.zeros((N, cap + 2))
    buy = np.zeros((N, N, cap + 1), dtype=bool)
    values = np.zeros(N)
    for s in range(N - 1, -1, -1):
        vs = g[s, : s + 1, None]
        Vs = V[: s + 1]
        skip = vs * factors[None, : cap + 1] + Vs[:, : cap + 1]
        att = alpha[: s + 1, s, None] + vs * factors[None, 1:] + Vs[:, 1:]
        b = att < skip
        buy[s, : s + 1] = b
        Vs[:, : cap + 1] = np.where(b, att, skip)
        values[s] = Vs[s, 0]
    plans = np.zeros((N, N))
    c = np.zeros(N, dtype=np.int64)
    for s in range(N):
        cols = np.arange(s + 1)
        live = c[: s + 1] <= cap
        b = np.zeros(s + 1, dtype=bool)
        b[live] = buy[s, cols[live], c[: s + 1][live]]
        plans[: s + 1, s] = b
        c[: s + 1] += b
    return values, plans


def _project_simplex(y: np.ndarray, z: float) -> np.ndarray:
    u = np.sort(y)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u * np.arange(1, y.size + 1) > css - z)[0][-1]
    return np.maximum(y - (css[rho] - z) / (rho + 1.0), 0.0)


@dataclass(frozen=True, eq=False)
class DualBound:
    """Lagrangian column bound for windows over a fixed noise table.

    ``g[i, j]`` is the noise term for absolute ``t = offset + i`` and
    ``tau = offset + j``. ``alpha[j, s]`` is the share of slot ``s``'s penalty
    assigned to column ``j``; each slot's shares sum to ``lam``.
    """

    offset: int
    g: np.ndarray
    p: float
    lam: float
    alpha: np.ndarray
    factors: np.ndarray
    suffix: np.ndarray  # suffix[j] = sum of column optima for columns >= j
    spare: np.ndarray  # spare[j, s] = sum_{tau=j+1..s} alpha[tau, s]
    value: float

    @property
    def size(self) -> int:
        return self.g.shape[0]

    @classmethod
    def fit(
        cls,
        g_noise: np.ndarray,
        p: float,
        lam: float,
        offset: int = 0,
        iters: int = 1500,
        upper: float | None = None,
    ) -> "DualBound":
        g = np.tril(np.asarray(g_noise, dtype=float))
        N = g.shape[0]
        cap = count_cap(p, N)
        factors = _capped_factors(p, cap)
        alpha = np.zeros((N, N))
        for s in range(N):
            alpha[: s + 1, s] = lam / (s + 1)
        values, plans = _all_columns(g, alpha, factors)
        best, best_alpha = values.sum(), alpha.copy()
        if iters > 0 and N > 1:
            if upper is None:
                table = GramianTable(k=0, H=N, g_noise=g, g_innov=g[:, 0].copy(), lam=lam)
                upper = _local_search(table, p, _greedy(table, p))[1]
            step_scale = 1.0
            for it in range(iters):
                grad = np.zeros((N, N))
                for s in range(N):
                    col = plans[: s + 1, s]
                    grad[: s + 1, s] = col - col.mean()
                norm = float((grad**2).sum())
                gap = upper - values.sum()
                if norm == 0.0 or gap <= 1e-9 * max(abs(upper), 1.0):
                    break
                step = step_scale * gap / norm
                for s in range(N):
                    alpha[: s + 1, s] = _project_simplex(alpha[: s + 1, s] + step * grad[: s + 1, s], lam)
                if it % 100 == 99:
                    step_scale *= 0.7
                values, plans = _all_columns(g, alpha, factors)
                if values.sum() > best:
                    best, best_alpha = values.sum(), alpha.copy()
        return cls._assemble(offset, g, p, lam, best_alpha, factors)

    @classmethod
    def _assemble(cls, offset, g, p, lam, alpha, factors) -> "DualBound":
        N = g.shape[0]
        values = np.array([column_value(g[j:, j], alpha[j, j:], factors) for j in range(N)])
        suffix = np.concatenate((np.cumsum(values[::-1])[::-1], [0.0]))
        spare = np.zeros((N + 1, N))
        for s in range(N):
            # spare[j, s] = alpha[j+1..s, s].sum(), zero once j >= s
            tail = np.cumsum(alpha[s:0:-1, s])[::-1]
            spare[:s, s] = tail
        g.setflags(write=False)
        return cls(offset, g, float(p), float(lam), alpha, factors, suffix, spare, float(values.sum()))

    @classmethod
    def for_table(cls, table: GramianTable, p: float, iters: int | None = None) -> "DualBound":
        """Bound over the noise columns of one window (innovation column excluded)."""
        if iters is None:
            iters = min(1500, 20 * table.H)
        return cls.fit(table.g_noise, p, table.lam, offset=table.k, iters=iters)

    def node_bound(self, J: int, v: np.ndarray) -> float:
        """Lower bound on the remaining cost at absolute depth ``J`` with state ``v``."""
        prices = self.lam - self.spare[J, J:]
        return column_value(v, prices, self.factors) + self.suffix[J + 1]

    def covers(self, table: GramianTable, p: float) -> bool:
        lo = table.k - self.offset
        return (
            lo >= 0
            and lo + table.H == self.size
            and abs(self.p - p) <= 1e-15
            and abs(self.lam - table.lam) <= 1e-12 * max(1.0, self.lam)
        )


# ---------------------------------------------------------------- incumbents


def _neighbours(theta: np.ndarray) -> np.ndarray:
    H = theta.size
    moves = [theta.copy() for _ in range(H)]
    for i in range(H):
        moves[i][i] ^= 1
    ones = np.flatnonzero(theta)
    for i in ones:
        for j in (i - 1, i + 1):
            if 0 <= j < H and theta[j] == 0:
                x = theta.copy()
                x[i], x[j] = 0, 1
                moves.append(x)
    return np.array(moves)


def _local_search(table: GramianTable, p: float, theta: np.ndarray) -> tuple[np.ndarray, float]:
    """Best-improvement descent over single flips and one-slot shifts."""
    theta = np.asarray(theta, dtype=np.int64).copy()
    current = float(batch_costs(table, theta[None, :], p)[0])
    while True:
        cands = _neighbours(theta)
        costs = batch_costs(table, cands, p)
        b = int(np.argmin(costs))
        if costs[b] < current - 1e-12 * abs(current):
            theta, current = cands[b], float(costs[b])
        else:
            return theta, current


def _greedy(table: GramianTable, p: float) -> np.ndarray:
    """Forward rollout that attempts whenever the immediate saving beats ``lam``."""
    H = table.H
    beta = 1.0 - p
    g = table.g_noise
    v = table.g_innov.copy()
    theta = np.zeros(H, dtype=np.int64)
    for j in range(H):
        a = int(p * v[0] >= table.lam)
        theta[j] = a
        f = beta if a else 1.0
        v = f * v[1:] + (g[j + 1:, j + 1] if j + 1 < H else 0.0)
    return theta


# ---------------------------------------------------------------- branch and bound


class _Search:
    def __init__(self, table: GramianTable, p: float, dual: DualBound | None):
        self.table = table
        self.p = p
        self.H = table.H
        self.lam = table.lam
        self.beta = 1.0 - p
        self.g = table.g_noise
        H = self.H
        # all-attempt remainder of noise columns tau >= j: suffix over columns
        powers = survival_factors(p, H)
        col = np.zeros(H + 1)
        for j in range(1, H):
            col[j] = powers[1 : H - j + 1] @ self.g[j:, j]
        self.all_on = np.concatenate((np.cumsum(col[:H][::-1])[::-1], [0.0]))
        self.powers = powers
        self.dual = dual
        self.shift = table.k - dual.offset if dual is not None else 0
        self.nodes = 0

    def child(self, j: int, v: np.ndarray, a: int) -> tuple[float, np.ndarray]:
        f = self.beta if a else 1.0
        step = f * v[0] + self.lam * a
        nv = f * v[1:]
        if j + 1 < self.H:
            nv = nv + self.g[j + 1:, j + 1]
        return step, nv

    def bound(self, j: int, v: np.ndarray) -> float:
        """Lower bound on the cost of slots ``j..H-1`` given state ``v``."""
        if j == self.H:
            return 0.0
        simple = float(self.powers[1 : v.size + 1] @ v) + self.all_on[j + 1]
        if self.dual is None:
            return simple
        return max(simple, self.dual.node_bound(self.shift + j, v))

    def dive(self) -> np.ndarray:
        """Follow the child with the smaller bound from root to leaf."""
        theta = np.zeros(self.H, dtype=np.int64)
        v = self.table.g_innov.copy()
        for j in range(self.H):
            best = None
            for a in (1, 0):
                step, nv = self.child(j, v, a)
                b = step + self.bound(j + 1, nv)
                if best is None or b < best[0]:
                    best = (b, a, nv)
            theta[j] = best[1]
            v = best[2]
        return theta

    def run(self, incumbent: float) -> tuple[np.ndarray | None, float]:
        self.best = incumbent
        self.best_theta = None
        self.prefix = np.zeros(self.H, dtype=np.int64)
        self._visit(0, self.table.g_innov.copy(), 0.0)
        return self.best_theta, self.best

    def _visit(self, j: int, v: np.ndarray, acc: float) -> None:
        self.nodes += 1
        if j == self.H:
            if acc < self.best:
                self.best = acc
                self.best_theta = self.prefix.copy()
            return
        kids = []
        for a in (1, 0):
            step, nv = self.child(j, v, a)
            nacc = acc + step
            kids.append((nacc + self.bound(j + 1, nv), -a, nv, nacc))
        # cheaper bound first; attempt first on ties
        kids.sort(key=lambda kid: (kid[0], kid[1]))
        for lb, neg_a, nv, nacc in kids:
            if lb < self.best:
                self.prefix[j] = -neg_a
                self._visit(j + 1, nv, nacc)
        self.prefix[j] = 0


def solve_bnb(
    table: GramianTable,
    p: float,
    incumbent_hint: Schedule | Sequence[int] | None = None,
    dual: DualBound | None = None,
    use_dual: bool = True,
) -> SolveResult:
    """Exact minimizer of the window cost by depth-first branch and bound.

    ``dual`` may carry a bound fitted once for the whole instance; it is used
    when it covers this window. Otherwise one is fitted for the window unless
    ``use_dual`` is false, in which case only the all-attempt bound prunes.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError("p must lie in (0,1]")
    H = table.H
    if dual is not None and not dual.covers(table, p):
        raise ValueError("dual bound was fitted for a different instance or window")
    if dual is None and use_dual and H > 1:
        dual = DualBound.for_table(table, p)
    search = _Search(table, p, dual)

    starts = [search.dive(), _greedy(table, p)]
    if incumbent_hint is not None:
        hint = as_schedule(incumbent_hint).as_array()
        if hint.size == H:
            starts.append(hint)
    polished = [_local_search(table, p, s) for s in starts]
    inc_theta, inc_cost = min(polished, key=lambda pc: pc[1])

    # slack so that a leaf equal to the incumbent up to rounding still replaces it
    theta, _ = search.run(inc_cost + 1e-12 * abs(inc_cost) + 1e-300)
    if theta is None:
        theta = inc_theta
    sched = Schedule(tuple(theta))
    return SolveResult(sched, schedule_cost(table, sched, p), search.nodes, Proof.OPTIMAL)


# ---------------------------------------------------------------- ratio bounds


@dataclass(frozen=True)
class RatioBounds:
    lower: float
    upper: float
    ratio: float
    C_max: int


def _charged_sum(table: GramianTable, theta: np.ndarray) -> float:
    """Sum of ``g[t, tau]`` over pairs whose interval holds at least one attempt."""
    c = interval_counts(theta)
    mask = np.tril(c >= 1)
    return float(table.g[mask].sum())


def ratio_bounds(
    theta_star_1: Schedule | Sequence[int],
    theta_star_p: Schedule | Sequence[int],
    table: GramianTable,
    p: float,
) -> RatioBounds:
    """Bracket ``J_p* / J_1*`` from the two optimal schedules.

    ``J_1`` is the cost with a perfect channel (``0**0 = 1``, ``0**c = 0``).
    """
    th1 = as_schedule(theta_star_1).as_array()
    thp = as_schedule(theta_star_p).as_array()
    J1_star = schedule_cost(table, th1, 1.0)
    Jp_star = schedule_cost(table, thp, p)
    J1_of_p = schedule_cost(table, thp, 1.0)
    c_max = int(thp.sum())
    if J1_star <= 0.0:
        return RatioBounds(1.0, 1.0, 1.0, c_max)
    upper = 1.0 + (1.0 - p) * _charged_sum(table, th1) / J1_star
    charged_p = _charged_sum(table, thp)
    lower = 1.0 + (1.0 - p) ** c_max * charged_p / J1_of_p if charged_p > 0.0 else 1.0
    return RatioBounds(lower, upper, Jp_star / J1_star, c_max)


def solve_ratio_bounds(table: GramianTable, p: float, exact=solve_bnb) -> RatioBounds:
    """Solve both optima with ``exact`` and bracket their ratio."""
    th1 = exact(table, 1.0).schedule
    thp = exact(table, p).schedule
    return ratio_bounds(th1, thp, table, p)


__all__ = [
    "Decision", "Proof", "CertificateOutcome", "SolveResult", "RatioBounds", "DualBound",
    "certify", "solve_enumerate", "solve_bnb", "ratio_bounds", "solve_ratio_bounds",
    "column_value", "count_cap", "schedule_code",
]
