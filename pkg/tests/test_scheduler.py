import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from etlqg.covariance import (
    GramianTable,
    Schedule,
    batch_costs,
    build_tables,
    enumerate_schedules,
    noise_gramians,
    schedule_cost,
    schedule_cost_direct,
)
from etlqg.lqg import solve_riccati
from etlqg.model import boeing747_preset
from etlqg.scheduler import (
    Decision,
    DualBound,
    Proof,
    certify,
    column_value,
    count_cap,
    ratio_bounds,
    solve_bnb,
    solve_enumerate,
    solve_ratio_bounds,
)

from instances import random_window, scalar_problem


def one(v):
    return np.array([[float(v)]])


# ---------------------------------------------------------------- certificates


def test_zero_innovation_skips():
    out = certify(np.zeros(2), np.eye(2), 2 * np.eye(2), 0.7, 1.0)
    assert out.decision is Decision.SKIP
    assert out.attempt_stat == 0.0 and out.skip_stat == 0.0


def test_scalar_attempt():
    out = certify(np.array([2.0]), one(1.0), one(1.0), 0.5, 1.0)
    assert out.decision is Decision.ATTEMPT
    assert out.attempt_stat == pytest.approx(2.0)


def test_scalar_gap_is_ambiguous():
    out = certify(np.array([1.0]), one(0.5), one(1.5), 0.5, 0.5)
    assert (out.attempt_stat, out.skip_stat) == pytest.approx((0.25, 0.75))
    assert out.decision is Decision.AMBIGUOUS


def test_boundary_ties_go_to_certificate():
    assert certify(np.array([1.0]), one(2.0), one(3.0), 0.5, 1.0).decision is Decision.ATTEMPT
    assert certify(np.array([1.0]), one(1.0), one(2.0), 0.5, 1.0).decision is Decision.SKIP


def _split_minimum(table, p):
    thetas = enumerate_schedules(table.H)
    costs = batch_costs(table, thetas, p)
    return costs[thetas[:, 0] == 1].min(), costs[thetas[:, 0] == 0].min()


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.sampled_from([0.2, 0.5, 0.8, 1.0]))
def test_certificates_are_sound(seed, p):
    rng = np.random.default_rng(seed)
    prob, sol, k, e, table = random_window(rng, 3, 10, p, lam_spread=2.5)
    out = certify(e, sol.Gamma[k], sol.W[k], p, prob.lam)
    assert out.attempt_stat <= out.skip_stat * (1 + 1e-12) + 1e-15
    best_on, best_off = _split_minimum(table, p)
    tol = 1e-9 * max(abs(best_on), abs(best_off))
    if out.decision is Decision.ATTEMPT:
        assert best_on <= best_off + tol
    elif out.decision is Decision.SKIP:
        assert best_off <= best_on + tol


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_first_step_gain_lies_between_the_two_statistics(seed):
    # the saving from attempting at k, for any fixed tail, is bracketed exactly
    rng = np.random.default_rng(seed)
    prob, sol, k, e, table = random_window(rng, 3, 8, 0.6)
    out = certify(e, sol.Gamma[k], sol.W[k], 0.6, prob.lam)
    tail = rng.integers(0, 2, size=table.H - 1)
    off = schedule_cost(table, np.r_[0, tail], 0.6)
    on = schedule_cost(table, np.r_[1, tail], 0.6)
    gain = off - on + prob.lam
    scale = max(out.skip_stat, 1e-12)
    assert out.attempt_stat - 1e-9 * scale <= gain <= out.skip_stat + 1e-9 * scale


# ---------------------------------------------------------------- enumeration


def _table(g, lam, k=0):
    g = np.tril(np.asarray(g, dtype=float))
    noise = g.copy()
    noise[:, 0] = 0.0
    return GramianTable(k=k, H=g.shape[0], g_noise=noise, g_innov=g[:, 0].copy(), lam=lam)


def test_penalty_dominates_gives_no_attempts():
    rng = np.random.default_rng(0)
    g = np.tril(rng.uniform(0, 1, size=(6, 6)))
    res = solve_enumerate(_table(g, g.sum()), 0.5)
    assert res.schedule.theta == (0,) * 6
    assert res.proof is Proof.ENUMERATED


def test_vanishing_penalty_attempts_everywhere():
    rng = np.random.default_rng(1)
    g = np.tril(rng.uniform(0.5, 1, size=(6, 6)))
    res = solve_enumerate(_table(g, 1e-9), 0.5)
    assert res.schedule.theta == (1,) * 6


def test_tie_break_prefers_fewer_attempts_then_lower_code():
    # every single attempt saves exactly the same amount: cost ties everywhere
    g = np.zeros((3, 3))
    g[2, 2] = 1.0
    table = _table(g, 0.5)
    # attempting at the last slot saves 0.5 at p=0.5 and costs 0.5: tie with skipping
    assert solve_enumerate(table, 0.5).schedule.theta == (0, 0, 0)
    g = np.zeros((2, 2))
    table = _table(g, 1.0)
    assert solve_enumerate(table, 0.5).schedule.theta == (0, 0)


def test_enumeration_refuses_large_windows():
    table = _table(np.ones((23, 23)), 1.0)
    with pytest.raises(ValueError, match="budget"):
        solve_enumerate(table, 0.5)


def test_scalar_regression_fixture():
    prob = scalar_problem(a=2.0, T=6, p=0.5, lam=0.2)
    sol = solve_riccati(prob)
    table = build_tables(prob, sol, 0, np.ones(1))
    res = solve_enumerate(table, 0.5)
    assert res.schedule.theta == (1, 1, 1, 1, 1, 1)
    assert res.cost == pytest.approx(374.57659260765666, rel=1e-12)
    # the recorded optimum agrees with the covariance recursion
    assert schedule_cost_direct(prob, sol, res.schedule, np.ones(1), 0) == pytest.approx(res.cost, rel=1e-10)
    assert solve_bnb(table, 0.5).cost == pytest.approx(res.cost, rel=1e-12)


# ---------------------------------------------------------------- branch and bound


@pytest.mark.parametrize("p", [0.3, 1.0])
def test_single_slot_window(p):
    table = _table([[3.0]], 1.0)
    res = solve_bnb(table, p)
    assert res.cost == pytest.approx(min(3.0, (1 - p) * 3.0 + 1.0))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.sampled_from([0.2, 0.5, 0.8, 1.0]), use_dual=st.booleans())
def test_bnb_matches_enumeration(seed, p, use_dual):
    rng = np.random.default_rng(seed)
    _, _, _, _, table = random_window(rng, 3, 12, p)
    exact = solve_enumerate(table, p)
    res = solve_bnb(table, p, use_dual=use_dual)
    assert res.cost == pytest.approx(exact.cost, rel=1e-10)
    assert res.cost == pytest.approx(schedule_cost(table, res.schedule, p), rel=1e-12)
    assert res.proof is Proof.OPTIMAL


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_bnb_ignores_bad_hints(seed):
    rng = np.random.default_rng(seed)
    _, _, _, _, table = random_window(rng, 3, 10, 0.5)
    exact = solve_enumerate(table, 0.5)
    for hint in (Schedule.zeros(table.H), Schedule.ones(table.H), Schedule.ones(max(table.H - 1, 1))):
        assert solve_bnb(table, 0.5, incumbent_hint=hint).cost == pytest.approx(exact.cost, rel=1e-10)


def test_boeing_window_dominates_trivial_schedules():
    prob = boeing747_preset()
    sol = solve_riccati(prob)
    noise = noise_gramians(prob, sol)
    dual = DualBound.fit(noise, prob.p, prob.lam, iters=300)
    e = np.array([0.9, -1.4, 0.3, 1.1])
    for k in (0, 17):
        table = build_tables(prob, sol, k, e, noise)
        res = solve_bnb(table, prob.p, dual=dual)
        assert res.cost <= schedule_cost(table, Schedule.ones(table.H), prob.p) + 1e-9
        assert res.cost <= schedule_cost(table, Schedule.zeros(table.H), prob.p) + 1e-9
        # the same window solved with a window-local bound agrees
        assert solve_bnb(table, prob.p).cost == pytest.approx(res.cost, rel=1e-10)


def test_dual_for_other_instance_is_rejected():
    rng = np.random.default_rng(2)
    _, _, _, _, table = random_window(rng, 2, 8, 0.5)
    dual = DualBound.for_table(table, 0.6, iters=5)
    with pytest.raises(ValueError):
        solve_bnb(table, 0.5, dual=dual)


# ---------------------------------------------------------------- dual bound pieces


def test_column_value_matches_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(20):
        m = int(rng.integers(1, 8))
        p = float(rng.choice([0.3, 0.6, 1.0]))
        v = rng.uniform(0, 2, size=m)
        prices = rng.uniform(0, 1, size=m)
        beta = 1 - p
        brute = min(
            sum(v[s] * beta ** sum(th[: s + 1]) + prices[s] * th[s] for s in range(m))
            for th in itertools.product((0, 1), repeat=m)
        )
        factors = np.r_[beta ** np.arange(m + 1), 0.0]
        assert column_value(v, prices, factors) == pytest.approx(brute, rel=1e-12, abs=1e-15)


def test_count_cap():
    assert count_cap(1.0, 50) == 0
    assert count_cap(0.7, 50) == 23
    assert count_cap(0.01, 50) == 50


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), iters=st.sampled_from([0, 3, 50]))
def test_dual_value_never_exceeds_optimum(seed, iters):
    rng = np.random.default_rng(seed)
    _, _, _, _, table = random_window(rng, 3, 10, float(rng.choice([0.3, 0.7])))
    p = 0.5
    # noise-only window: every column is covered by the dual
    g = table.g_noise.copy()
    g[:, 0] = table.g_innov
    dual = DualBound.fit(g, p, table.lam, iters=iters)
    noise_only = GramianTable(k=0, H=table.H, g_noise=table.g_noise, g_innov=table.g_innov, lam=table.lam)
    opt = solve_enumerate(noise_only, p).cost
    assert dual.value <= opt * (1 + 1e-10) + 1e-12
    alpha_sums = dual.alpha.sum(axis=0)
    np.testing.assert_allclose(alpha_sums, table.lam, rtol=1e-9)
    assert (dual.alpha >= 0).all()


# ---------------------------------------------------------------- ratio bounds


def test_lossless_ratio_is_one():
    rng = np.random.default_rng(4)
    _, _, _, _, table = random_window(rng, 3, 8, 1.0)
    th = solve_enumerate(table, 1.0).schedule
    rb = ratio_bounds(th, th, table, 1.0)
    assert rb.lower == pytest.approx(1.0) and rb.upper == pytest.approx(1.0) and rb.ratio == pytest.approx(1.0)


def test_no_lossless_attempts_means_upper_is_one():
    rng = np.random.default_rng(5)
    g = np.tril(rng.uniform(0, 1, size=(5, 5)))
    table = _table(g, 1e6)
    rb = solve_ratio_bounds(table, 0.5, solve_enumerate)
    assert rb.upper == 1.0 and rb.ratio == pytest.approx(1.0)


def test_zero_cost_guard():
    table = _table(np.zeros((3, 3)), 1.0)
    rb = ratio_bounds(Schedule.zeros(3), Schedule.zeros(3), table, 0.5)
    assert (rb.lower, rb.upper, rb.ratio) == (1.0, 1.0, 1.0)


def test_scalar_fixture_sandwich():
    prob = scalar_problem(a=2.0, T=6, p=0.5, lam=0.2)
    table = build_tables(prob, solve_riccati(prob), 0, np.ones(1))
    rb = solve_ratio_bounds(table, 0.5, solve_enumerate)
    assert rb.lower - 1e-9 <= rb.ratio <= rb.upper + 1e-9
    assert rb.lower >= 1.0 and rb.C_max <= table.H


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), p=st.sampled_from([0.3, 0.5, 0.7]))
def test_optimum_non_increasing_in_p(seed, p):
    rng = np.random.default_rng(seed)
    _, _, _, _, table = random_window(rng, 3, 9, p)
    costs = [solve_bnb(table, q).cost for q in (p, min(p + 0.2, 1.0), 1.0)]
    assert costs[0] >= costs[1] * (1 - 1e-10) and costs[1] >= costs[2] * (1 - 1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_ratio_shrinks_towards_one_as_losses_vanish(seed):
    rng = np.random.default_rng(seed)
    _, _, _, _, table = random_window(rng, 3, 9, 0.5)
    ratios = [solve_ratio_bounds(table, p, solve_enumerate).ratio for p in (0.9, 0.99, 0.999, 1 - 1e-6)]
    assert all(a >= b - 1e-12 for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] <= 1.001
