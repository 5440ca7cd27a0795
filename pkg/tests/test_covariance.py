import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from etlqg.covariance import (
    Schedule,
    batch_costs,
    build_tables,
    closed_form_cov,
    enumerate_schedules,
    noise_gramians,
    propagate_recursive,
    schedule_code,
    schedule_cost,
    schedule_cost_direct,
)
from etlqg.lqg import solve_riccati

from instances import random_problem, random_window, scalar_problem, scalar_solution


def test_zero_innovation_gives_zero_innovation_terms():
    rng = np.random.default_rng(0)
    prob = random_problem(rng, 3, 6, 0.5)
    table = build_tables(prob, solve_riccati(prob), 1, np.zeros(3))
    np.testing.assert_array_equal(table.g_innov, 0.0)


def test_identity_propagation_table():
    prob = scalar_problem(T=5)
    table = build_tables(prob, scalar_solution(5), 0, np.zeros(1))
    rows, cols = np.tril_indices(5)
    valid = cols >= 1
    np.testing.assert_allclose(table.g_noise[rows[valid], cols[valid]], 1.0)


def test_doubling_plant_lag_two():
    prob = scalar_problem(a=2.0, T=4)
    table = build_tables(prob, scalar_solution(4), 0, np.zeros(1))
    assert table.g_noise[3, 1] == pytest.approx(16.0)


def test_noise_table_shared_across_windows():
    rng = np.random.default_rng(1)
    prob = random_problem(rng, 3, 9, 0.5)
    sol = solve_riccati(prob)
    noise = noise_gramians(prob, sol)
    e = rng.normal(size=3)
    for k in (0, 3, 8):
        a = build_tables(prob, sol, k, e)
        b = build_tables(prob, sol, k, e, noise)
        np.testing.assert_array_equal(a.g, b.g)


def test_open_loop_recursion_when_never_attempting():
    rng = np.random.default_rng(2)
    prob = random_problem(rng, 2, 6, 0.5)
    covs = propagate_recursive(prob, Schedule.zeros(6), np.zeros(2), 0)
    S = np.zeros((2, 2))
    for t in range(6):
        np.testing.assert_allclose(covs[t], S, atol=1e-12)
        S = prob.A @ S @ prob.A.T + prob.Sigma_w


@pytest.mark.parametrize("theta, expected", [((1, 1), 0.5), ((1, 0), 1.0)])
def test_scalar_two_step_covariance(theta, expected):
    prob = scalar_problem(T=2, p=0.5)
    rec = propagate_recursive(prob, theta, np.zeros(1), 0)
    assert rec[1, 0, 0] == pytest.approx(expected)
    assert closed_form_cov(prob, theta, np.zeros(1), 0, 1)[0, 0] == pytest.approx(expected)


def test_closed_form_matches_recursion_three_states():
    rng = np.random.default_rng(37)
    prob = random_problem(rng, 3, 12, 0.37)
    theta = rng.integers(0, 2, size=12)
    e = rng.normal(size=3)
    rec = propagate_recursive(prob, theta, e, 0)
    for t in range(12):
        cf = closed_form_cov(prob, theta, e, 0, t)
        np.testing.assert_allclose(cf, rec[t], rtol=1e-9, atol=1e-9 * np.abs(rec[t]).max())


def test_cost_examples():
    prob = scalar_problem(T=2, p=0.5, lam=0.3)
    table = build_tables(prob, scalar_solution(2), 0, np.zeros(1))
    assert schedule_cost(table, (0, 1), 0.5) == pytest.approx(0.8)
    assert schedule_cost(table, (0, 0), 0.5) == pytest.approx(table.g.sum())
    rng = np.random.default_rng(3)
    _, _, _, _, table = random_window(rng, 3, 8, 1.0)
    assert schedule_cost(table, Schedule.ones(table.H), 1.0) == pytest.approx(table.lam * table.H)


def test_cost_examples_match_recursion_oracle():
    prob = scalar_problem(T=2, p=0.5, lam=0.3)
    sol = scalar_solution(2)
    assert schedule_cost_direct(prob, sol, (0, 1), np.zeros(1), 0) == pytest.approx(0.8)


def test_counters():
    c = Schedule((1, 0, 1)).counters()
    np.testing.assert_array_equal(c, [[1, 0, 0], [1, 0, 0], [2, 1, 1]])


def test_schedule_rejects_non_binary():
    with pytest.raises(ValueError):
        Schedule((0, 2))


def test_enumeration_order():
    rows = enumerate_schedules(3)
    assert rows.tolist()[:3] == [[0, 0, 0], [0, 0, 1], [0, 1, 0]]
    assert all(schedule_code(r) == i for i, r in enumerate(rows))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.sampled_from([0.1, 0.3, 0.5, 0.9, 1.0]))
def test_closed_form_cost_equals_trace_of_recursion(seed, p):
    rng = np.random.default_rng(seed)
    prob, sol, k, e, table = random_window(rng, 4, 12, p)
    theta = rng.integers(0, 2, size=table.H)
    a = schedule_cost(table, theta, p)
    b = schedule_cost_direct(prob, sol, theta, e, k)
    assert a == pytest.approx(b, rel=1e-9, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.sampled_from([0.2, 0.5, 0.8]))
def test_cost_monotone_in_each_attempt_bit(seed, p):
    rng = np.random.default_rng(seed)
    _, _, _, _, table = random_window(rng, 3, 10, p)
    theta = rng.integers(0, 2, size=table.H)
    i = int(rng.integers(0, table.H))
    off, on = theta.copy(), theta.copy()
    off[i], on[i] = 0, 1
    # an extra attempt never raises the error part
    assert schedule_cost(table, on, p) - table.lam <= schedule_cost(table, off, p) + 1e-9 * abs(schedule_cost(table, off, p))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_tables_non_negative_and_lower_triangular(seed):
    rng = np.random.default_rng(seed)
    _, _, _, _, table = random_window(rng, 4, 12, 0.5)
    assert (table.g >= 0).all()
    np.testing.assert_array_equal(np.triu(table.g, 1), 0.0)
    np.testing.assert_array_equal(table.g_noise[:, 0], 0.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_recursion_covariances_stay_psd(seed):
    rng = np.random.default_rng(seed)
    prob, _, k, e, table = random_window(rng, 4, 12, 0.6)
    covs = propagate_recursive(prob, rng.integers(0, 2, size=table.H), e, k)
    for S in covs:
        assert np.linalg.eigvalsh(S).min() >= -1e-9 * max(np.abs(S).max(), 1.0)


def test_batch_matches_single():
    rng = np.random.default_rng(5)
    _, _, _, _, table = random_window(rng, 3, 9, 0.4)
    thetas = enumerate_schedules(table.H)
    batch = batch_costs(table, thetas, 0.4)
    single = [schedule_cost(table, t, 0.4) for t in thetas]
    np.testing.assert_allclose(batch, single, rtol=1e-14)
