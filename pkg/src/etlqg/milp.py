"""Mixed-integer linear model of the window scheduling problem.

The survival factor ``(1 - p) ** c`` is linearized with one-hot selectors:
each pair ``(t, tau)`` gets an integer counter ``c_t_tau`` equal to the
attempts on ``[tau, t]`` and binaries ``s_t_tau_i`` with ``sum_i s = 1`` and
``sum_i i * s = c``, so that ``sum_i beta_i s_t_tau_i`` equals the factor.
Counters are tied to the attempts through running counts from the window
start. Names use absolute time indices.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .covariance import GramianTable, Schedule, as_schedule, interval_counts, survival_factors


class MilpInfeasible(AssertionError):
    """An assignment implied by a schedule violated a model row."""


@dataclass(frozen=True)
class Row:
    name: str
    kind: str
    cols: tuple[int, ...]
    coefs: tuple[int, ...]
    rhs: int


@dataclass(frozen=True, eq=False)
class MilpModel:
    k: int
    H: int
    p: float
    lam: float
    names: tuple[str, ...]
    kinds: tuple[str, ...]  # "B" binary, "I" general integer
    lower: np.ndarray
    upper: np.ndarray
    objective: np.ndarray
    rows: tuple[Row, ...]
    index: dict = field(repr=False)  # name -> column
    roles: tuple[tuple, ...] = field(repr=False)  # column -> (role, indices)

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def count(self, role: str) -> int:
        return sum(1 for r in self.roles if r[0] == role)

    def theta_col(self, t: int) -> int:
        return self.index[f"th_{t}"]

    def to_arrays(self):
        """Dense ``(c, A_eq, b_eq, lower, upper, integrality)`` for generic solvers."""
        A = np.zeros((len(self.rows), self.n_vars))
        b = np.zeros(len(self.rows))
        for r, row in enumerate(self.rows):
            A[r, list(row.cols)] = row.coefs
            b[r] = row.rhs
        return self.objective.copy(), A, b, self.lower.copy(), self.upper.copy(), np.ones(self.n_vars, dtype=int)


def selector_count(H: int) -> int:
    """Selectors per window: pairs at lag ``d`` carry ``d + 2`` choices each."""
    return sum((H - d) * (d + 2) for d in range(H))


def build_milp(table: GramianTable, p: float, lam: float | None = None) -> MilpModel:
    if not 0.0 < p < 1.0:
        raise ValueError("the selector linearization needs p in (0,1)")
    lam = table.lam if lam is None else float(lam)
    k, H = table.k, table.H
    g = table.g
    beta = survival_factors(p, H)

    names: list[str] = []
    kinds: list[str] = []
    lower: list[int] = []
    upper: list[int] = []
    obj: list[float] = []
    roles: list[tuple] = []

    def add(name, kind, lo, hi, cost, role):
        names.append(name)
        kinds.append(kind)
        lower.append(lo)
        upper.append(hi)
        obj.append(cost)
        roles.append(role)
        return len(names) - 1

    th = [add(f"th_{k + t}", "B", 0, 1, lam, ("theta", k + t)) for t in range(H)]
    cnt = {}
    for t in range(H):
        for tau in range(t + 1):
            cnt[t, tau] = add(f"c_{k + t}_{k + tau}", "I", 0, t - tau + 1, 0.0, ("counter", k + t, k + tau))
    sel = {}
    for t in range(H):
        for tau in range(t + 1):
            for i in range(t - tau + 2):
                sel[t, tau, i] = add(
                    f"s_{k + t}_{k + tau}_{i}", "B", 0, 1, float(beta[i] * g[t, tau]),
                    ("selector", k + t, k + tau, i),
                )

    rows: list[Row] = []
    for t in range(H):
        # running count from the window start; c_{k-1,k} = 0 is folded in
        cols = (cnt[t, 0], th[t]) + ((cnt[t - 1, 0],) if t else ())
        coefs = (1, -1) + ((-1,) if t else ())
        rows.append(Row(f"run_{k + t}", "run", cols, coefs, 0))
    for t in range(H):
        for tau in range(1, t + 1):
            rows.append(Row(
                f"int_{k + t}_{k + tau}", "interval",
                (cnt[t, tau], cnt[t, 0], cnt[tau - 1, 0]), (1, -1, 1), 0,
            ))
    for t in range(H):
        for tau in range(t + 1):
            cols = tuple(sel[t, tau, i] for i in range(t - tau + 2))
            rows.append(Row(f"one_{k + t}_{k + tau}", "onehot", cols, (1,) * len(cols), 1))
    for t in range(H):
        for tau in range(t + 1):
            cols = tuple(sel[t, tau, i] for i in range(1, t - tau + 2)) + (cnt[t, tau],)
            coefs = tuple(range(1, t - tau + 2)) + (-1,)
            rows.append(Row(f"link_{k + t}_{k + tau}", "link", cols, coefs, 0))

    objective = np.array(obj)
    if not np.all(np.isfinite(objective)):
        raise ValueError("non-finite objective coefficient")
    return MilpModel(
        k=k, H=H, p=float(p), lam=lam, names=tuple(names), kinds=tuple(kinds),
        lower=np.array(lower), upper=np.array(upper), objective=objective,
        rows=tuple(rows), index={n: j for j, n in enumerate(names)}, roles=tuple(roles),
    )


def implied_assignment(model: MilpModel, theta: Schedule | Sequence[int]) -> np.ndarray:
    """The unique integer vector ``(theta, c, s)`` consistent with ``theta``."""
    th = as_schedule(theta).as_array()
    if th.size != model.H:
        raise ValueError(f"schedule length {th.size} != model horizon {model.H}")
    c = interval_counts(th)
    x = np.zeros(model.n_vars, dtype=np.int64)
    k = model.k
    for j, role in enumerate(model.roles):
        if role[0] == "theta":
            x[j] = th[role[1] - k]
        elif role[0] == "counter":
            x[j] = c[role[1] - k, role[2] - k]
        else:
            _, t, tau, i = role
            x[j] = int(c[t - k, tau - k] == i)
    return x


def check_assignment(model: MilpModel, x: np.ndarray) -> None:
    """Verify bounds and every equality row in exact integer arithmetic."""
    if np.any(x < model.lower) or np.any(x > model.upper):
        j = int(np.flatnonzero((x < model.lower) | (x > model.upper))[0])
        raise MilpInfeasible(f"{model.names[j]}={x[j]} outside its bounds")
    for row in model.rows:
        lhs = sum(int(a) * int(x[j]) for j, a in zip(row.cols, row.coefs))
        if lhs != row.rhs:
            raise MilpInfeasible(f"row {row.name}: {lhs} != {row.rhs}")


def eval_assignment(model: MilpModel, theta: Schedule | Sequence[int]) -> float:
    """Objective of the feasible point implied by ``theta`` after checking it."""
    x = implied_assignment(model, theta)
    check_assignment(model, x)
    return float(model.objective[x != 0] @ x[x != 0])


def _num(v: float) -> str:
    return format(float(v), ".17g")


def _terms(cols, coefs, names) -> list[str]:
    out = []
    for j, a in zip(cols, coefs):
        sign = "-" if a < 0 else "+"
        mag = abs(a)
        out.append(f"{sign} {names[j]}" if mag == 1 else f"{sign} {_num(mag)} {names[j]}")
    return out


def export_lp(model: MilpModel) -> str:
    """CPLEX-style LP text; deterministic for a given model."""
    names = model.names
    lines = ["\\ window k=%d H=%d p=%s lambda=%s" % (model.k, model.H, _num(model.p), _num(model.lam)), "Minimize", " obj:"]
    sel_cols = [j for j, r in enumerate(model.roles) if r[0] == "selector"]
    th_cols = [j for j, r in enumerate(model.roles) if r[0] == "theta"]
    for j in sel_cols + th_cols:
        lines.append(f"   + {_num(model.objective[j])} {names[j]}")
    lines.append("Subject To")
    for row in model.rows:
        terms = _terms(row.cols, row.coefs, names)
        # wrap long rows; LP readers accept continuation lines
        chunks = [" ".join(terms[i : i + 8]) for i in range(0, len(terms), 8)]
        lines.append(f" {row.name}: " + "\n   ".join(chunks) + f" = {row.rhs}")
    lines.append("Bounds")
    for j, kind in enumerate(model.kinds):
        if kind == "I":
            lines.append(f" {int(model.lower[j])} <= {names[j]} <= {int(model.upper[j])}")
    lines.append("Binary")
    lines.extend(f" {names[j]}" for j, kind in enumerate(model.kinds) if kind == "B")
    lines.append("General")
    lines.extend(f" {names[j]}" for j, kind in enumerate(model.kinds) if kind == "I")
    lines.append("End")
    return "\n".join(lines) + "\n"
