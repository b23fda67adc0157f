"""Closed-form valuation of perpetual stock loans (``alpha == r``).

The borrower repays the first time the collateral reaches a constant
threshold ``V*``.  With ``k = gamma (1 - rho**2)`` the threshold solves

    V* - L = log(1 + k V* / beta) / k

and everything else (indifference value, value function, bank cost, fee)
is explicit once ``V*`` is known.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonConvergence
from .model import (
    CollateralModel,
    FeeQuote,
    LoanTerms,
    RiskPreference,
    beta as beta_of,
    complete_market_threshold,
)

# below this k = gamma (1 - rho^2) the incomplete-market formulas are 0/0
K_UNDERFLOW = 1e-12


@dataclass(frozen=True)
class PerpetualSolution:
    v_star: float
    beta: float
    residual: float
    k: float
    iterations: int = 0


def risk_aversion_factor(collateral: CollateralModel, pref: RiskPreference) -> float:
    return pref.gamma * (1.0 - collateral.rho**2)


def threshold_residual(v: float, L: float, k: float, b: float) -> float:
    return v - L - math.log1p(k * v / b) / k


def solve_threshold(
    loan: LoanTerms,
    collateral: CollateralModel,
    pref: RiskPreference,
    max_iter: int = 200,
) -> PerpetualSolution:
    """Find the repayment threshold by safeguarded Newton iteration.

    The residual ``g(V) = V - L - log(1 + k V / beta) / k`` is increasing
    with ``g(L) < 0``; the upper bracket is doubled from ``10 L`` until
    ``g`` changes sign.  Newton steps leaving the bracket are replaced by
    bisection.
    """
    loan.require_perpetual_alpha(collateral.r)
    b = beta_of(collateral)
    k = risk_aversion_factor(collateral, pref)
    if k < K_UNDERFLOW:
        raise NonConvergence(
            f"k = gamma (1 - rho^2) = {k:.3g} underflows; use complete_market_fee"
        )
    L = loan.L
    tol = 1e-10 * max(1.0, L)

    lo = L * (1.0 + 1e-9)
    hi = 10.0 * L
    while threshold_residual(hi, L, k, b) <= 0:
        hi *= 2.0
        if not math.isfinite(hi):
            raise NonConvergence("could not bracket the threshold")

    v = 0.5 * (lo + hi)
    for it in range(1, max_iter + 1):
        g = threshold_residual(v, L, k, b)
        if g > 0:
            hi = v
        else:
            lo = v
        dg = 1.0 - 1.0 / (b + k * v)
        step_ok = dg > 0
        if step_ok:
            v_new = v - g / dg
            step_ok = lo < v_new < hi
        if not step_ok:
            v_new = 0.5 * (lo + hi)
        if abs(v_new - v) < 1e-3 * tol or hi - lo < 1e-3 * tol:
            v = v_new
            res = threshold_residual(v, L, k, b)
            if abs(res) < tol:
                return PerpetualSolution(v, b, res, k, it)
        v = v_new
        res = threshold_residual(v, L, k, b)
        if abs(res) < 1e-3 * tol:
            return PerpetualSolution(v, b, res, k, it)
    raise NonConvergence(f"threshold iteration did not converge in {max_iter} steps")


def indifference_value(v, sol: PerpetualSolution, loan: LoanTerms, collateral=None, pref=None):
    """Borrower's indifference value ``p(v)`` of the repayment option.

    ``collateral`` and ``pref`` are accepted for call-site symmetry; the
    solution already carries ``beta`` and ``k``.
    """
    v = np.asarray(v, dtype=float)
    k, vs, L = sol.k, sol.v_star, loan.L
    ratio = np.clip(v / vs, 0.0, 1.0) ** sol.beta
    inner = np.expm1(-k * (vs - L)) * ratio + 1.0
    p = np.where(v < vs, -np.log(inner) / k, v - L)
    return p[()] if p.ndim == 0 else p


def value_function_g(x, v, sol: PerpetualSolution, loan: LoanTerms, collateral, pref):
    """Borrower's maximal expected utility ``G(x, v)`` in closed form."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    g = pref.gamma
    one_m_rho2 = 1.0 - collateral.rho**2
    vs, L = sol.v_star, loan.L
    ratio = np.clip(v / vs, 0.0, 1.0) ** sol.beta
    bracket = 1.0 + np.expm1(-g * (vs - L) * one_m_rho2) * ratio
    below = -np.exp(-g * x) * bracket ** (1.0 / one_m_rho2)
    above = -np.exp(-g * (x + v - L))
    out = np.where(v < vs, below, above)
    return out[()] if out.ndim == 0 else out


def bank_cost(v, sol: PerpetualSolution, loan: LoanTerms):
    """Bank's hedging cost ``(V* - L)(v / V*)**beta`` below the threshold, ``v - L`` above."""
    return _barrier_cost(v, sol.v_star, sol.beta, loan.L)


def _barrier_cost(v, v_star, b, L):
    v = np.asarray(v, dtype=float)
    below = (v_star - L) * np.clip(v / v_star, 0.0, 1.0) ** b
    out = np.where(v < v_star, below, v - L)
    return out[()] if out.ndim == 0 else out


def complete_market_value(v, loan: LoanTerms, collateral: CollateralModel):
    """Risk-neutral value of the repayment option (limit ``k -> 0`` of ``p``)."""
    v = np.asarray(v, dtype=float)
    a0 = complete_market_threshold(loan.L, collateral)
    if math.isinf(a0):
        out = v.copy()
        return out[()] if out.ndim == 0 else out
    return _barrier_cost(v, a0, beta_of(collateral), loan.L)


def complete_market_fee(loan: LoanTerms, collateral: CollateralModel) -> FeeQuote:
    """Fee charged when the borrower exercises at the risk-neutral threshold.

    With no dividends the threshold is infinite, the option is worth the
    whole collateral and the fee equals the principal.
    """
    loan.require_perpetual_alpha(collateral.r)
    b = beta_of(collateral)
    L, v0 = loan.L, loan.v0
    a0 = complete_market_threshold(L, collateral)
    if math.isinf(a0):
        return FeeQuote(
            fee=L, bank_cost=v0, boundary=math.inf, p0=v0, L=L, v0=v0,
            diagnostics={"branch": "complete-market-no-dividend", "beta": b},
        )
    if v0 >= a0:
        cost, fee, branch = v0 - L, 0.0, "immediate-exercise"
    else:
        cost = float(_barrier_cost(v0, a0, b, L))
        fee, branch = L + cost - v0, "continuation"
    return FeeQuote(
        fee=fee, bank_cost=cost, boundary=a0, p0=cost, L=L, v0=v0,
        diagnostics={"branch": "complete-market/" + branch, "beta": b},
    )


def fee(loan: LoanTerms, collateral: CollateralModel, pref: RiskPreference) -> FeeQuote:
    """Perpetual loan fee ``c = L + C(v0) - v0`` (zero once ``v0 >= V*``)."""
    loan.require_perpetual_alpha(collateral.r)
    k = risk_aversion_factor(collateral, pref)
    if k < K_UNDERFLOW:
        quote = complete_market_fee(loan, collateral)
        quote.diagnostics["k"] = k
        return quote
    sol = solve_threshold(loan, collateral, pref)
    L, v0 = loan.L, loan.v0
    if v0 >= sol.v_star:
        cost, c, branch = v0 - L, 0.0, "immediate-exercise"
    else:
        cost = float(bank_cost(v0, sol, loan))
        c, branch = L + cost - v0, "continuation"
    return FeeQuote(
        fee=c,
        bank_cost=cost,
        boundary=sol.v_star,
        p0=float(indifference_value(v0, sol, loan)),
        L=L,
        v0=v0,
        diagnostics={
            "branch": branch,
            "iterations": sol.iterations,
            "residual": sol.residual,
            "beta": sol.beta,
            "k": sol.k,
        },
    )
