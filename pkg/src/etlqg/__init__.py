"""Event-triggered LQG scheduling over a lossy channel."""

from .covariance import GramianTable, Schedule, build_tables, closed_form_cov, noise_gramians, propagate_recursive, schedule_cost
from .lqg import RiccatiSolution, solve_riccati
from .milp import MilpModel, build_milp, eval_assignment, export_lp
from .model import Problem, ProblemError, boeing747_preset, effective_lambda, load_problem
from .scheduler import CertificateOutcome, Decision, RatioBounds, SolveResult, certify, ratio_bounds, solve_bnb, solve_enumerate
from .sim import AggregateStats, Policy, RunRecord, monte_carlo, simulate_run, sweep_p

__version__ = "0.1.0"
