"""Certainty-equivalent finite-horizon LQG controller."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .model import Problem


@dataclass(frozen=True, eq=False)
class RiccatiSolution:
    """Backward Riccati quantities, stacked along the first axis.

    ``P`` has ``T + 1`` entries (``P[T] = Q_T``); ``S``, ``L``, ``Gamma`` and
    the tail Gramians ``W`` have ``T`` entries each. ``Gamma[k] = L_k' S_k L_k``
    weighs the controller's estimation error at step ``k``.
    """

    P: np.ndarray
    S: np.ndarray
    L: np.ndarray
    Gamma: np.ndarray
    W: np.ndarray

    @property
    def T(self) -> int:
        return self.L.shape[0]


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def solve_riccati(prob: Problem) -> RiccatiSolution:
    A, B, T = prob.A, prob.B, prob.T
    n, m = prob.n, prob.m
    P = np.empty((T + 1, n, n))
    S = np.empty((T, m, m))
    L = np.empty((T, m, n))
    Gamma = np.empty((T, n, n))
    P[T] = prob.Q_T
    for k in range(T - 1, -1, -1):
        Pn = P[k + 1]
        S[k] = _sym(prob.R + B.T @ Pn @ B)
        try:
            factor = cho_factor(S[k])
        except LinAlgError as exc:
            raise np.linalg.LinAlgError(f"S_{k} is not positive definite") from exc
        L[k] = cho_solve(factor, B.T @ Pn @ A)
        Gamma[k] = _sym(L[k].T @ S[k] @ L[k])
        P[k] = _sym(A.T @ Pn @ A + prob.Q - Gamma[k])
    W = tail_gramians(Gamma, A, T)
    return RiccatiSolution(P=P, S=S, L=L, Gamma=Gamma, W=W)


def tail_gramians(Gamma: np.ndarray | RiccatiSolution, A: np.ndarray, T: int) -> np.ndarray:
    """``W_k = sum_j (A^j)' Gamma_{k+j} A^j`` by the backward recurrence
    ``W_{T-1} = Gamma_{T-1}``, ``W_k = Gamma_k + A' W_{k+1} A``."""
    if isinstance(Gamma, RiccatiSolution):
        Gamma = Gamma.Gamma
    W = np.empty_like(Gamma[:T])
    W[T - 1] = Gamma[T - 1]
    for k in range(T - 2, -1, -1):
        W[k] = _sym(Gamma[k] + A.T @ W[k + 1] @ A)
    return W


def constant_cost(prob: Problem, sol: RiccatiSolution) -> float:
    """Schedule-independent part of the expected cost."""
    second_moment = prob.Sigma_0 + np.outer(prob.x0_mean, prob.x0_mean)
    noise = sum(np.trace(sol.P[k + 1] @ prob.Sigma_w) for k in range(prob.T))
    return float(np.trace(sol.P[0] @ second_moment) + noise)
