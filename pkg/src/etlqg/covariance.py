"""Error-covariance propagation and the closed-form scheduling cost.

For a planning window that starts at step ``k`` with scheduler-side error
``e_s``, the controller's error covariance under a fixed attempt pattern
``theta`` is a sum of precomputable Gramians, each scaled by the survival
factor ``(1 - p) ** c`` where ``c`` counts the attempts on the interval the
Gramian has been propagating over. Traces of those Gramians against the error
weights ``Gamma_t`` give the scalar tables used by the solvers.

Indexing inside a window is local: row/column ``i`` of a table refers to
absolute time ``k + i``. Column 0 holds the innovation terms, columns
``1..H-1`` the process-noise terms.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .lqg import RiccatiSolution
from .model import Problem

NEG_TOL = 1e-10


@dataclass(frozen=True)
class Schedule:
    """Binary attempt decisions ``theta_{k|k}, ..., theta_{T-1|k}``."""

    theta: tuple[int, ...]

    def __post_init__(self):
        theta = tuple(int(v) for v in self.theta)
        if any(v not in (0, 1) for v in theta):
            raise ValueError("schedule entries must be 0 or 1")
        object.__setattr__(self, "theta", theta)

    @classmethod
    def zeros(cls, H: int) -> "Schedule":
        return cls((0,) * H)

    @classmethod
    def ones(cls, H: int) -> "Schedule":
        return cls((1,) * H)

    def __len__(self) -> int:
        return len(self.theta)

    @property
    def attempts(self) -> int:
        return sum(self.theta)

    def as_array(self) -> np.ndarray:
        return np.array(self.theta, dtype=np.int64)

    def counters(self) -> np.ndarray:
        """``c[t, tau]`` = attempts on ``[tau, t]``; zero above the diagonal."""
        return interval_counts(self.as_array())


def as_schedule(theta: Schedule | Sequence[int] | np.ndarray) -> Schedule:
    return theta if isinstance(theta, Schedule) else Schedule(tuple(np.asarray(theta).ravel()))


def interval_counts(theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.int64)
    cs = np.concatenate(([0], np.cumsum(theta)))
    c = cs[1:, None] - cs[None, :-1]
    return np.tril(c)


def survival_factors(p: float, upto: int) -> np.ndarray:
    """``beta_i = (1 - p) ** i`` for ``i = 0..upto`` with ``0 ** 0 = 1``."""
    return np.power(1.0 - p, np.arange(upto + 1, dtype=float))


def _clamp(g: np.ndarray, scale: float) -> np.ndarray:
    floor = -NEG_TOL * max(scale, 1.0)
    if g.size and g.min() < floor:
        raise FloatingPointError(f"Gramian trace {g.min():.3e} is materially negative")
    return np.maximum(g, 0.0)


def matrix_powers(A: np.ndarray, count: int) -> np.ndarray:
    """``A^0 .. A^(count-1)`` from a single forward chain."""
    n = A.shape[0]
    out = np.empty((max(count, 1), n, n))
    out[0] = np.eye(n)
    for i in range(1, count):
        out[i] = A @ out[i - 1]
    return out[:count]


def noise_gramians(prob: Problem, sol: RiccatiSolution) -> np.ndarray:
    """Absolute-time table ``g[t, tau] = tr(Gamma_t A^(t-tau) Sigma_w A^(t-tau)')``.

    Only ``tau <= t`` entries are meaningful; the upper triangle is zero. The
    table depends on the instance alone, so windows at any ``k`` slice it.
    """
    T = prob.T
    powers = matrix_powers(prob.A, T)
    lagged = np.einsum("dij,jk,dlk->dil", powers, prob.Sigma_w, powers)
    # by_lag[t, d] = <Gamma_t, A^d Sigma_w A^d'>
    by_lag = np.einsum("tij,dij->td", sol.Gamma, lagged)
    t_idx, tau_idx = np.tril_indices(T)
    g = np.zeros((T, T))
    g[t_idx, tau_idx] = by_lag[t_idx, t_idx - tau_idx]
    scale = float(np.trace(sol.Gamma, axis1=1, axis2=2).max() * np.trace(lagged, axis1=1, axis2=2).max())
    return _clamp(g, scale)


@dataclass(frozen=True, eq=False)
class GramianTable:
    """Stage-cost coefficients for the window ``[k, k + H)``.

    ``g_noise[i, j]`` (``1 <= j <= i``) is the noise term for absolute
    ``t = k + i``, ``tau = k + j``; column 0 of ``g_noise`` is zero.
    ``g_innov[i] = |A^i e_s|^2_{Gamma_{k+i}}``.
    """

    k: int
    H: int
    g_noise: np.ndarray
    g_innov: np.ndarray
    lam: float

    @property
    def g(self) -> np.ndarray:
        """Full lower-triangular table with the innovation column in place."""
        g = self.g_noise.copy()
        g[:, 0] = self.g_innov
        return g

    @property
    def T(self) -> int:
        return self.k + self.H

    def total(self) -> float:
        return float(self.g_noise.sum() + self.g_innov.sum())


def innovation_terms(sol: RiccatiSolution, A: np.ndarray, k: int, e_s: np.ndarray) -> np.ndarray:
    T = sol.T
    e = np.asarray(e_s, dtype=float)
    out = np.empty(T - k)
    y = e.copy()
    for i in range(T - k):
        out[i] = y @ sol.Gamma[k + i] @ y
        y = A @ y
    scale = float(e @ e) * float(np.abs(sol.Gamma[k:]).max(initial=0.0))
    return _clamp(out, scale)


def build_tables(
    prob: Problem,
    sol: RiccatiSolution,
    k: int,
    e_s: np.ndarray,
    noise: np.ndarray | None = None,
) -> GramianTable:
    """Tables for the window starting at ``k``.

    ``noise`` may be a table from :func:`noise_gramians` computed once for the
    instance; otherwise it is built here.
    """
    if not 0 <= k < prob.T:
        raise ValueError(f"window start k={k} outside [0, {prob.T})")
    if noise is None:
        noise = noise_gramians(prob, sol)
    g_noise = noise[k:, k:].copy()
    g_noise[:, 0] = 0.0
    return GramianTable(
        k=k, H=prob.T - k, g_noise=g_noise,
        g_innov=innovation_terms(sol, prob.A, k, e_s), lam=prob.lam,
    )


def propagate_recursive(
    prob: Problem,
    schedule: Schedule | Sequence[int],
    e_s: np.ndarray,
    k: int,
) -> np.ndarray:
    """Covariances ``Sigma_{k|k} .. Sigma_{T-1|k}`` by the step recursion."""
    theta = as_schedule(schedule).theta
    H = prob.T - k
    if len(theta) != H:
        raise ValueError(f"schedule length {len(theta)} != window length {H}")
    A, p = prob.A, prob.p
    e = np.asarray(e_s, dtype=float)
    out = np.empty((H, prob.n, prob.n))
    out[0] = (1.0 - p * theta[0]) * np.outer(e, e)
    for i in range(1, H):
        out[i] = (1.0 - p * theta[i]) * (A @ out[i - 1] @ A.T + prob.Sigma_w)
        out[i] = 0.5 * (out[i] + out[i].T)
    return out


def closed_form_cov(
    prob: Problem,
    schedule: Schedule | Sequence[int],
    e_s: np.ndarray,
    k: int,
    t: int,
) -> np.ndarray:
    """``Sigma_{t|k} = sum_tau (1-p)^c[t,tau] G_{t,tau}`` for absolute ``t``."""
    theta = as_schedule(schedule).as_array()
    if not k <= t < prob.T:
        raise ValueError(f"t={t} outside window [{k}, {prob.T})")
    i = t - k
    c = interval_counts(theta)
    beta = survival_factors(prob.p, len(theta))
    powers = matrix_powers(prob.A, i + 1)
    e = np.asarray(e_s, dtype=float)
    y = powers[i] @ e
    out = beta[c[i, 0]] * np.outer(y, y)
    for j in range(1, i + 1):
        Ad = powers[i - j]
        out = out + beta[c[i, j]] * (Ad @ prob.Sigma_w @ Ad.T)
    return out


def batch_costs(table: GramianTable, thetas: np.ndarray, p: float) -> np.ndarray:
    """Closed-form cost of each row of ``thetas`` (shape ``(M, H)``)."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.int64))
    H = table.H
    if thetas.shape[1] != H:
        raise ValueError(f"schedule length {thetas.shape[1]} != window length {H}")
    g = table.g
    beta = survival_factors(p, H)
    cs = np.concatenate((np.zeros((thetas.shape[0], 1), dtype=np.int64), np.cumsum(thetas, axis=1)), axis=1)
    t_idx, tau_idx = np.tril_indices(H)
    counts = cs[:, t_idx + 1] - cs[:, tau_idx]
    return beta[counts] @ g[t_idx, tau_idx] + table.lam * thetas.sum(axis=1)


def schedule_cost(table: GramianTable, schedule: Schedule | Sequence[int], p: float) -> float:
    """Expected window cost ``sum (1-p)^c g + lam * sum theta`` (``0**0 = 1``)."""
    theta = as_schedule(schedule).as_array()
    return float(batch_costs(table, theta[None, :], p)[0])


def schedule_cost_direct(
    prob: Problem,
    sol: RiccatiSolution,
    schedule: Schedule | Sequence[int],
    e_s: np.ndarray,
    k: int,
) -> float:
    """Window cost from the covariance recursion, ``sum tr(Gamma_t Sigma_t) + lam * sum theta``."""
    theta = as_schedule(schedule)
    covs = propagate_recursive(prob, theta, e_s, k)
    traces = np.einsum("tij,tji->t", sol.Gamma[k:], covs)
    return float(traces.sum() + prob.lam * theta.attempts)


def enumerate_schedules(H: int, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Rows ``start..stop-1`` of the ``2**H`` schedules, ``theta_0`` as the high bit."""
    stop = 2**H if stop is None else stop
    codes = np.arange(start, stop, dtype=np.int64)
    shifts = np.arange(H - 1, -1, -1, dtype=np.int64)
    return (codes[:, None] >> shifts[None, :]) & 1


def schedule_code(theta: Iterable[int]) -> int:
    code = 0
    for v in theta:
        code = (code << 1) | int(v)
    return code
