import math

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

from stockloan import oracle, perpetual
from stockloan.errors import StepCountTooSmall
from stockloan.finite import ExerciseBoundary, Scenario
from stockloan.model import LoanTerms, RiskPreference
from stockloan.oracle import PathConfig


def test_first_passage_probability_limits():
    assert oracle.first_passage_probability(100, 90, -0.1, 0.2, 1.0) == 1.0
    # driftless: reflection principle
    p = oracle.first_passage_probability(100, 120, 0.0, 0.2, 2.0)
    assert p == pytest.approx(2 * norm.sf(math.log(1.2) / (0.2 * math.sqrt(2))), rel=1e-12)
    ever = oracle.first_passage_probability(100, 120, -0.05, 0.2, math.inf)
    assert ever == pytest.approx(math.exp(-2 * 0.05 * math.log(1.2) / 0.04))
    assert oracle.first_passage_probability(100, 120, -0.05, 0.2, 1e4) == pytest.approx(ever, rel=1e-9)


def test_perpetual_truncation_bounds_the_tail(case4):
    loan, col, pref = case4
    v_star = perpetual.solve_threshold(loan, col, pref).v_star
    nu = -0.05 - 0.5 * 0.15**2
    T = oracle.perpetual_truncation(100, v_star, 0.05, 0.15)
    total = oracle.first_passage_probability(100, v_star, nu, 0.15, math.inf)
    tail = total - oracle.first_passage_probability(100, v_star, nu, 0.15, T)
    assert T >= 200 and tail <= 1e-4 * total


def test_seed_determinism(case4):
    loan, col, pref = case4
    v_star = perpetual.solve_threshold(loan, col, pref).v_star
    cfg = PathConfig(n_paths=4000, n_steps=100, seed=11)
    a = oracle.mc_barrier_cost(v_star, loan, col, cfg)
    b = oracle.mc_barrier_cost(v_star, loan, col, cfg)
    c = oracle.mc_barrier_cost(v_star, loan, col, PathConfig(n_paths=4000, n_steps=100, seed=12))
    assert a == b
    assert a != c


def test_batches_do_not_depend_on_total_size(case4):
    # the first batch draws from the same child stream whatever the path count
    loan, col, pref = case4
    v_star = perpetual.solve_threshold(loan, col, pref).v_star
    small = oracle.mc_barrier_cost(v_star, loan, col, PathConfig(n_paths=2 * oracle.BATCH_SIZE, n_steps=50))
    large = oracle.mc_barrier_cost(v_star, loan, col, PathConfig(n_paths=4 * oracle.BATCH_SIZE, n_steps=50))
    assert small != large
    assert abs(small[0] - large[0]) < 3 * small[1]


@pytest.mark.parametrize("L", [80.0, 100.0, 120.0])
def test_antithetic_does_not_increase_stderr(L):
    sc = Scenario(L=L)
    times = np.linspace(0, 5, 6)
    b = ExerciseBoundary(times, np.linspace(1.8 * L, 1.1 * L, 6))
    plain = oracle.mc_barrier_cost(b, sc.loan, sc.collateral, PathConfig(n_paths=20_000, n_steps=100, antithetic=False))
    anti = oracle.mc_barrier_cost(b, sc.loan, sc.collateral, PathConfig(n_paths=20_000, n_steps=100, antithetic=True))
    assert anti[1] <= plain[1]


def test_immediate_exercise_has_zero_stderr(case4):
    loan, col, _ = case4
    assert oracle.mc_barrier_cost(95.0, loan, col) == (5.0, 0.0)
    b = ExerciseBoundary(np.array([0.0, 1.0]), np.array([80.0, 120.0]))
    sc = Scenario(L=70, T=1.0)
    assert oracle.mc_barrier_cost(b, sc.loan, sc.collateral) == (10.0, 0.0)


def test_perpetual_cost_within_three_stderr(case4):
    loan, col, pref = case4
    sol = perpetual.solve_threshold(loan, col, pref)
    est, se = oracle.mc_barrier_cost(sol.v_star, loan, col, PathConfig(n_paths=40_000, n_steps=400), T_trunc=200.0)
    assert abs(est - 11.9015) < 3 * se


def test_no_barrier_monte_carlo_is_european():
    sc = Scenario(L=100, T=2.0)
    b = ExerciseBoundary.infinite([0.0, 2.0])
    est, se = oracle.mc_barrier_cost(b, sc.loan, sc.collateral, PathConfig(n_paths=40_000, n_steps=10))
    ref = oracle.european_call_closed_form(100, 100, 0.4, 0.05, -0.02, 2.0)
    assert abs(est - ref) < 3 * se


def test_european_closed_form_against_quadrature():
    v0, L, s, r_hat, T = 100.0, 100.0, 0.2, 0.05, 1.0
    m = math.log(v0) + (r_hat - 0.5 * s * s) * T
    sd = s * math.sqrt(T)
    f = lambda x: (math.exp(x) - L) * norm.pdf(x, m, sd)
    val, _ = integrate.quad(f, math.log(L), m + 12 * sd, epsabs=1e-12, epsrel=1e-12)
    ref = math.exp(-r_hat * T) * val
    assert oracle.european_call_closed_form(v0, L, s, 0.0, r_hat, T) == pytest.approx(ref, rel=1e-9)


def test_european_degenerate_cases():
    assert oracle.european_call_closed_form(120, 100, 0.3, 0.0, 0.0, 0.0) == 20.0
    assert oracle.european_call_closed_form(80, 100, 0.3, 0.0, 0.0, 0.0) == 0.0
    assert oracle.european_call_closed_form(120, 100, 0.0, 0.0, 0.0, 3.0) == pytest.approx(20.0)
    assert oracle.european_call_closed_form(120, 100, 1e-9, 0.0, 0.0, 3.0) == pytest.approx(20.0, abs=1e-9)


def test_tree_needs_enough_steps():
    sc = Scenario()
    with pytest.raises(StepCountTooSmall):
        oracle.tree_stopping_F(sc.loan, sc.collateral, sc.pref, 49)
    oracle.tree_stopping_F(sc.loan, sc.collateral, sc.pref, 50)


def test_tree_constant_obstacle():
    # principal so large that the obstacle is 1 on every reachable node
    sc = Scenario(L=1e9)
    assert oracle.tree_stopping_F(sc.loan, sc.collateral, sc.pref, 200) == 1.0


def test_tree_extreme_risk_aversion_exercises_at_once():
    sc = Scenario(L=80, gamma=100.0)
    k = 100.0 * (1 - 0.16)
    F = oracle.tree_stopping_F(sc.loan, sc.collateral, sc.pref, 500)
    assert F == pytest.approx(math.exp(-k * 20.0), rel=1e-12)


def test_tree_value_range_and_monotone_in_v0():
    sc = Scenario()
    Fs = [oracle.tree_stopping_F(LoanTerms(100, 0.07, v0, 5.0), sc.collateral, sc.pref, 400) for v0 in (20, 60, 100, 140, 200)]
    assert all(0 < F <= 1 for F in Fs)
    assert np.all(np.diff(Fs) <= 0)


def test_tree_boundary_nonincreasing_when_alpha_equals_r():
    sc = Scenario(L=80, alpha=0.05)
    _, times, lowest = oracle.tree_stopping(sc.loan, sc.collateral, sc.pref, 2000)
    ok = np.isfinite(lowest)
    # the tree boundary lives on a lattice, so compare with one node of slack
    up = math.exp(0.4 * math.sqrt(5.0 / 2000))
    running_min = np.minimum.accumulate(lowest[ok])
    assert np.all(lowest[ok] <= running_min * up**2 + 1e-9)
    assert lowest[ok][0] > lowest[ok][-1]
    assert times[-1] == pytest.approx(5.0)
