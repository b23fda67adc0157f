"""Slow, independent validators for the closed-form and finite-difference solvers.

* Monte Carlo for the bank's barrier claim under the risk-neutral measure.
  Crossings between monitoring dates are detected with the exact Brownian
  bridge probability for a barrier that is linear in log-space over the
  step, so a constant barrier is monitored without bias at any step size.
* A CRR binomial tree for ``F(0, v0) = inf_tau E0[kappa(tau, V_tau)]``,
  where ``V`` has drift ``-delta`` under the minimal martingale measure.
* The closed-form European value used when no barrier is active.

Path batches draw from ``SeedSequence(seed).spawn(n_batches)``: batch ``i``
always gets child ``i``, so results do not depend on scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import StepCountTooSmall
from .model import CollateralModel, LoanTerms, RiskPreference

BATCH_SIZE = 20_000


@dataclass(frozen=True)
class PathConfig:
    n_paths: int = 100_000
    n_steps: int = 500
    seed: int = 20240601
    antithetic: bool = True
    bridge: bool = True


def first_passage_probability(v0, barrier, drift, sigma, T):
    """P(max_{s<=T} log V_s >= log barrier) for GBM with log-drift ``drift``.

    ``T = inf`` gives the probability of ever reaching the barrier.
    """
    a = math.log(barrier / v0)
    if a <= 0:
        return 1.0
    if math.isinf(T):
        return 1.0 if drift >= 0 else math.exp(2.0 * drift * a / sigma**2)
    sd = sigma * math.sqrt(T)
    return norm.cdf((-a + drift * T) / sd) + math.exp(2.0 * drift * a / sigma**2) * norm.cdf(
        (-a - drift * T) / sd
    )


def perpetual_truncation(v0, barrier, delta, sigma, r_hat=0.0, rel=1e-4, floor=200.0):
    """Horizon after which the chance of a first hit is below ``rel`` of the total."""
    nu = r_hat - delta - 0.5 * sigma**2
    total = first_passage_probability(v0, barrier, nu, sigma, math.inf)
    if total == 0.0:
        return floor
    T = floor
    while total - first_passage_probability(v0, barrier, nu, sigma, T) > rel * total:
        T *= 2.0
    return T


def _normal_pair(rng, n, antithetic):
    if antithetic:
        half = rng.standard_normal(n)
        return np.concatenate([half, -half])
    return rng.standard_normal(n)


def _uniform_pair(rng, n, antithetic):
    if antithetic:
        half = rng.random(n)
        return np.concatenate([half, 1.0 - half])
    return rng.random(n)


def _simulate_batch(rng, n, times, log_barrier, payoff_at_hit, terminal_payoff, nu, sigma, x0, cfg):
    """Discounted payoff per path; ``n`` is the number of draws (paths double if antithetic)."""
    m = 2 * n if cfg.antithetic else n
    x = np.full(m, x0)
    value = np.zeros(m)
    alive = np.ones(m, dtype=bool)
    for i in range(1, times.size):
        dt = times[i] - times[i - 1]
        z = _normal_pair(rng, n, cfg.antithetic)
        u = _uniform_pair(rng, n, cfg.antithetic) if cfg.bridge else None
        x_new = x + nu * dt + sigma * math.sqrt(dt) * z
        b0, b1 = log_barrier[i - 1], log_barrier[i]
        hit = alive & (x_new >= b1)
        if cfg.bridge and np.isfinite(b0) and np.isfinite(b1):
            with np.errstate(over="ignore"):
                p = np.exp(-2.0 * (b0 - x) * (b1 - x_new) / (sigma**2 * dt))
            hit |= alive & (u < p)
        if np.any(hit):
            value[hit] = payoff_at_hit(0.5 * (times[i - 1] + times[i]))
            alive &= ~hit
        x = x_new
        if not alive.any():
            break
    if terminal_payoff is not None:
        value[alive] = terminal_payoff(x[alive])
    if cfg.antithetic:
        return 0.5 * (value[:n] + value[n:])
    return value


def mc_barrier_cost(boundary, loan: LoanTerms, collateral: CollateralModel, cfg: PathConfig = PathConfig(), T_trunc=None):
    """Risk-neutral value of the repayment option exercised at ``boundary``.

    ``boundary`` is either an :class:`~stockloan.finite.ExerciseBoundary`
    (finite maturity, terminal exercise if above the strike at ``T``) or a
    scalar threshold for a perpetual loan, simulated up to ``T_trunc``.
    Returns ``(estimate, standard_error)``.
    """
    r_hat = collateral.r - loan.alpha
    sigma, delta, L, v0 = collateral.sigma2, collateral.delta, loan.L, loan.v0
    nu = r_hat - delta - 0.5 * sigma**2

    if np.isscalar(boundary):
        barrier = float(boundary)
        if barrier <= v0:
            return max(barrier - L, 0.0), 0.0
        if T_trunc is None:
            T_trunc = perpetual_truncation(v0, barrier, delta, sigma, r_hat)
        times = np.linspace(0.0, T_trunc, cfg.n_steps + 1)
        log_barrier = np.log(barrier) + r_hat * times
        payoff_at_hit = lambda t: math.exp(-r_hat * t) * max(barrier * math.exp(r_hat * t) - L, 0.0)
        terminal = None
    else:
        if float(boundary.at(0.0)) <= v0:
            return max(float(boundary.at(0.0)) - L, 0.0), 0.0
        T = float(boundary.times[-1])
        times = np.linspace(0.0, T, cfg.n_steps + 1)
        hat = np.exp(r_hat * times) * boundary.at(times)
        with np.errstate(divide="ignore"):
            log_barrier = np.log(hat)
        payoff_at_hit = lambda t: math.exp(-r_hat * t) * max(
            math.exp(r_hat * t) * float(boundary.at(t)) - L, 0.0
        )
        terminal = lambda x: math.exp(-r_hat * T) * np.maximum(np.exp(x) - L, 0.0)

    seeds = np.random.SeedSequence(cfg.seed)
    n_units = cfg.n_paths // 2 if cfg.antithetic else cfg.n_paths
    n_batches = max(1, math.ceil(n_units / BATCH_SIZE))
    samples = []
    for b, child in enumerate(seeds.spawn(n_batches)):
        n = min(BATCH_SIZE, n_units - b * BATCH_SIZE)
        rng = np.random.default_rng(child)
        samples.append(
            _simulate_batch(rng, n, times, log_barrier, payoff_at_hit, terminal, nu, sigma, math.log(v0), cfg)
        )
    y = np.concatenate(samples)
    return float(y.mean()), float(y.std(ddof=1) / math.sqrt(y.size))


def tree_stopping(loan: LoanTerms, collateral: CollateralModel, pref: RiskPreference, n_steps: int = 5000):
    """Binomial optimal stopping for the borrower's obstacle problem.

    Returns ``(F0, times, lowest_exercise_node)``; the last array holds, for
    each step, the smallest tree price above the strike where stopping is
    optimal (``nan`` when none is).
    """
    if n_steps < 50:
        raise StepCountTooSmall("the stopping tree needs at least 50 steps")
    T = loan.T
    dt = T / n_steps
    s = collateral.sigma2
    up = math.exp(s * math.sqrt(dt))
    dn = 1.0 / up
    p = (math.exp(collateral.q0_drift * dt) - dn) / (up - dn)
    k = pref.gamma * (1.0 - collateral.rho**2)
    g = loan.alpha - collateral.r
    L = loan.L

    def kappa(i, v):
        return np.exp(-k * np.maximum(v - L * math.exp(g * i * dt), 0.0))

    j = np.arange(n_steps + 1)
    v = loan.v0 * up ** (2.0 * j - n_steps)
    F = kappa(n_steps, v)
    times = np.arange(n_steps + 1) * dt
    lowest = np.full(n_steps + 1, np.nan)
    above = v > L * math.exp(g * T)
    if above.any():
        lowest[-1] = v[above][0]
    for i in range(n_steps - 1, -1, -1):
        v = loan.v0 * up ** (2.0 * np.arange(i + 1) - i)
        cont = p * F[1:] + (1.0 - p) * F[:-1]
        kap = kappa(i, v)
        F = np.minimum(cont, kap)
        stop = (kap <= cont) & (v > L * math.exp(g * i * dt))
        if stop.any():
            lowest[i] = v[stop][0]
    return float(F[0]), times, lowest


def tree_stopping_F(loan: LoanTerms, collateral: CollateralModel, pref: RiskPreference, n_steps: int = 5000) -> float:
    """``F(0, v0)`` from the binomial stopping tree."""
    return tree_stopping(loan, collateral, pref, n_steps)[0]


def european_call_closed_form(v0, L, sigma2, delta, r_hat, T):
    """``exp(-r_hat T) E[(U_T - L)^+]`` with ``dU = (r_hat - delta) U dt + sigma2 U dW``."""
    if T <= 0:
        return max(v0 - L, 0.0)
    fwd = v0 * math.exp((r_hat - delta) * T)
    if sigma2 <= 0:
        return math.exp(-r_hat * T) * max(fwd - L, 0.0)
    sd = sigma2 * math.sqrt(T)
    d1 = (math.log(fwd / L) + 0.5 * sd * sd) / sd
    return math.exp(-r_hat * T) * (fwd * norm.cdf(d1) - L * norm.cdf(d1 - sd))
