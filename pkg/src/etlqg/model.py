"""Problem instances for event-triggered LQG over an erasure channel.

A :class:`Problem` bundles the plant ``x_{k+1} = A x_k + B u_k + w_k``, the
quadratic weights, the noise and initial-state statistics, the horizon, the
channel success probability and the communication penalty. Instances are
immutable once validated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from typing import Any

import numpy as np

MATRIX_KEYS = ("A", "B", "Q", "R", "Q_T", "Sigma_w", "Sigma_0")
CONFIG_KEYS = frozenset(
    MATRIX_KEYS + ("x0_mean", "T", "p", "lambda", "lambda_fail", "lambda_success")
)

# Boeing 747 longitudinal dynamics, 40,000 ft / 774 ft/s, 1 s sampling.
BOEING_A = (
    (0.99, 0.03, -0.02, -0.32),
    (0.01, 0.47, 4.70, 0.00),
    (0.02, -0.06, 0.40, 0.00),
    (0.01, -0.04, 0.72, 0.99),
)
BOEING_B = (
    (0.01, 0.99),
    (-3.44, 1.66),
    (-0.83, 0.44),
    (-0.47, 0.25),
)
BOEING_SIGMA2 = 1.0


class ProblemError(ValueError):
    """Raised when a configuration is malformed or violates an invariant."""


def effective_lambda(lambda1: float, lambda2: float, p: float) -> float:
    """Collapse failed/successful attempt penalties into one expected charge.

    An attempt costs ``lambda1`` when it is erased and ``lambda2`` when it is
    delivered, so its expected price is ``lambda1 * (1 - p) + lambda2 * p``.
    """
    return lambda1 * (1.0 - p) + lambda2 * p


def _frozen(a, ndim: int) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.ndim != ndim:
        raise ProblemError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Problem:
    """A validated scheduling instance.

    ``lam`` is always the single per-attempt penalty used by the scheduler.
    When the instance was specified with separate failed/successful
    penalties, ``lam_split`` keeps ``(lambda_fail, lambda_success)`` for the
    realized-cost ledger and ``lam`` holds their effective value.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    Q_T: np.ndarray
    Sigma_w: np.ndarray
    x0_mean: np.ndarray
    Sigma_0: np.ndarray
    T: int
    p: float
    lam: float
    lam_split: tuple[float, float] | None = field(default=None)

    def __post_init__(self):
        for name in MATRIX_KEYS:
            object.__setattr__(self, name, _frozen(getattr(self, name), 2))
        object.__setattr__(self, "x0_mean", _frozen(self.x0_mean, 1))
        object.__setattr__(self, "T", int(self.T))
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "lam", float(self.lam))
        if self.lam_split is not None:
            object.__setattr__(self, "lam_split", tuple(float(v) for v in self.lam_split))
        self.validate()

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def validate(self) -> None:
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ProblemError(f"A must be square, got shape {self.A.shape}")
        if self.B.shape[0] != n:
            raise ProblemError(f"B must have {n} rows, got shape {self.B.shape}")
        m = self.B.shape[1]
        for name in ("Q", "Q_T", "Sigma_w", "Sigma_0"):
            if getattr(self, name).shape != (n, n):
                raise ProblemError(f"{name} must be {n}x{n}, got {getattr(self, name).shape}")
        if self.R.shape != (m, m):
            raise ProblemError(f"R must be {m}x{m}, got {self.R.shape}")
        if self.x0_mean.shape != (n,):
            raise ProblemError(f"x0_mean must have length {n}, got {self.x0_mean.shape}")
        for name in MATRIX_KEYS:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ProblemError(f"{name} has non-finite entries")
        for name in ("Q", "Q_T", "Sigma_w", "Sigma_0"):
            _check_psd(name, getattr(self, name))
        _check_symmetric("R", self.R)
        if np.linalg.eigvalsh(self.R).min() <= 0.0:
            raise ProblemError("R not positive definite")
        if self.T < 1:
            raise ProblemError("T must be at least 1")
        if not 0.0 < self.p <= 1.0:
            raise ProblemError("p must lie in (0,1]")
        if not (np.isfinite(self.lam) and self.lam > 0.0):
            raise ProblemError("lambda must be positive")
        if self.lam_split is not None:
            if len(self.lam_split) != 2 or min(self.lam_split) <= 0.0:
                raise ProblemError("lambda_fail and lambda_success must be positive")
            expected = effective_lambda(*self.lam_split, self.p)
            if not np.isclose(self.lam, expected, rtol=1e-12, atol=0.0):
                raise ProblemError("lambda does not match the effective split penalty")

    def with_overrides(self, *, p=None, lam=None, T=None, Sigma_w=None) -> "Problem":
        """Return a copy with some scalar settings replaced.

        Overriding ``p`` on a split-penalty instance recomputes the effective
        penalty; overriding ``lam`` drops the split.
        """
        changes: dict[str, Any] = {}
        if Sigma_w is not None:
            changes["Sigma_w"] = Sigma_w
        if T is not None:
            changes["T"] = T
        if p is not None:
            changes["p"] = p
            if self.lam_split is not None and lam is None:
                changes["lam"] = effective_lambda(*self.lam_split, p)
        if lam is not None:
            changes["lam"] = lam
            changes["lam_split"] = None
        return replace(self, **changes)

    def to_config(self) -> dict:
        cfg: dict[str, Any] = {name: getattr(self, name).tolist() for name in MATRIX_KEYS}
        cfg["x0_mean"] = self.x0_mean.tolist()
        cfg["T"] = self.T
        cfg["p"] = self.p
        if self.lam_split is None:
            cfg["lambda"] = self.lam
        else:
            cfg["lambda_fail"], cfg["lambda_success"] = self.lam_split
        return cfg

    def equals(self, other: "Problem", tol: float = 0.0) -> bool:
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, np.ndarray):
                if a.shape != b.shape or not np.allclose(a, b, rtol=tol, atol=tol):
                    return False
            elif a != b and not (isinstance(a, float) and abs(a - b) <= tol * max(1.0, abs(a))):
                return False
        return True


def _check_symmetric(name: str, M: np.ndarray) -> None:
    scale = max(np.abs(M).max(), 1.0)
    if np.abs(M - M.T).max() > 1e-12 * scale:
        raise ProblemError(f"{name} not symmetric")


def _check_psd(name: str, M: np.ndarray) -> None:
    _check_symmetric(name, M)
    eig = np.linalg.eigvalsh((M + M.T) / 2.0)
    norm = np.abs(eig).max() if eig.size else 0.0
    if eig.min() < -1e-10 * max(norm, 1.0):
        raise ProblemError(f"{name} not positive semidefinite")


def problem_from_config(cfg: dict) -> Problem:
    if not isinstance(cfg, dict):
        raise ProblemError("config must be a JSON object")
    unknown = set(cfg) - CONFIG_KEYS
    if unknown:
        raise ProblemError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key in ("A", "B", "Q", "R", "Q_T", "Sigma_w", "T", "p"):
        if key not in cfg:
            raise ProblemError(f"missing config key: {key}")
    has_single = "lambda" in cfg
    has_split = "lambda_fail" in cfg or "lambda_success" in cfg
    if has_single == has_split:
        raise ProblemError("give either lambda or both lambda_fail and lambda_success")
    if has_split and not ("lambda_fail" in cfg and "lambda_success" in cfg):
        raise ProblemError("lambda_fail and lambda_success must be given together")

    try:
        A = np.array(cfg["A"], dtype=float)
        n = A.shape[0] if A.ndim == 2 else 0
        matrices = {name: np.array(cfg[name], dtype=float) for name in MATRIX_KEYS if name in cfg}
        x0_mean = np.array(cfg.get("x0_mean", np.zeros(n)), dtype=float)
        Sigma_0 = matrices.pop("Sigma_0", np.zeros((n, n)))
        p = float(cfg["p"])
        T = cfg["T"]
        if isinstance(T, bool) or not isinstance(T, int):
            raise ProblemError("T must be an integer")
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ProblemError):
            raise
        raise ProblemError(f"malformed config value: {exc}") from exc

    if not 0.0 < p <= 1.0:
        raise ProblemError("p must lie in (0,1]")
    if has_split:
        split = (float(cfg["lambda_fail"]), float(cfg["lambda_success"]))
        if min(split) <= 0.0:
            raise ProblemError("lambda_fail and lambda_success must be positive")
        lam = effective_lambda(*split, p)
    else:
        split = None
        lam = float(cfg["lambda"])
    return Problem(
        A=matrices["A"], B=matrices["B"], Q=matrices["Q"], R=matrices["R"],
        Q_T=matrices["Q_T"], Sigma_w=matrices["Sigma_w"], x0_mean=x0_mean,
        Sigma_0=Sigma_0, T=T, p=p, lam=lam, lam_split=split,
    )


def load_problem(config_text: str) -> Problem:
    """Parse and validate a JSON problem description."""
    try:
        cfg = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ProblemError(f"config is not valid JSON: {exc}") from exc
    return problem_from_config(cfg)


def dump_problem(prob: Problem) -> str:
    return json.dumps(prob.to_config(), indent=2)


def boeing747_preset(sigma2: float = BOEING_SIGMA2) -> Problem:
    """Linearized Boeing 747 longitudinal benchmark.

    The process-noise level is not pinned down by the benchmark description;
    ``sigma2`` scales ``Sigma_w = sigma2 * I`` and defaults to 1.
    """
    if sigma2 <= 0:
        raise ProblemError("sigma2 must be positive")
    eye = np.eye(4)
    return Problem(
        A=np.array(BOEING_A), B=np.array(BOEING_B),
        Q=5.0 * eye, R=np.eye(2), Q_T=5.0 * eye,
        Sigma_w=sigma2 * eye, x0_mean=np.full(4, 0.5), Sigma_0=0.4 * eye,
        T=50, p=0.7, lam=100.0,
    )
