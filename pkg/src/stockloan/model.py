"""Market, collateral, loan and preference parameters.

All prices are discounted by the money-market account, all rates are per
annum and the loan starts at time 0.  The collateral drift is never an
input: it is fixed by the CAPM equilibrium with the market portfolio, which
keeps the hitting exponent ``beta = 1 + 2 delta / sigma2**2`` at least one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import AlphaMismatch, ParameterError

__all__ = [
    "MarketModel",
    "CollateralModel",
    "LoanTerms",
    "RiskPreference",
    "implied_mu2",
    "beta",
    "complete_market_threshold",
]


def _finite(**values: float) -> None:
    for name, value in values.items():
        if not math.isfinite(value):
            raise ParameterError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class MarketModel:
    """Riskless rate and market-portfolio drift/volatility."""

    r: float = 0.05
    mu1: float = 0.10
    sigma1: float = 0.20

    def __post_init__(self) -> None:
        _finite(r=self.r, mu1=self.mu1, sigma1=self.sigma1)
        if self.sigma1 <= 0:
            raise ParameterError("sigma1 must be positive")

    @property
    def sharpe(self) -> float:
        return (self.mu1 - self.r) / self.sigma1


def implied_mu2(market: MarketModel, sigma2: float, delta: float, rho: float) -> float:
    """Equilibrium expected return of the collateral.

    ``mu2 = rho * sigma2 * (mu1 - r) / sigma1 + r - delta``
    """
    if not sigma2 > 0:
        raise ParameterError("sigma2 must be positive")
    return rho * sigma2 * (market.mu1 - market.r) / market.sigma1 + market.r - delta


@dataclass(frozen=True)
class CollateralModel:
    """Collateral volatility, dividend yield and correlation with the market.

    ``mu2`` is filled in from :func:`implied_mu2` and cannot be overridden.
    """

    market: MarketModel
    sigma2: float
    delta: float
    rho: float
    mu2: float = field(init=False)

    def __post_init__(self) -> None:
        _finite(sigma2=self.sigma2, delta=self.delta, rho=self.rho)
        if self.sigma2 <= 0:
            raise ParameterError("sigma2 must be positive")
        if self.delta < 0:
            raise ParameterError("negative dividend rates are not supported")
        if not -1.0 <= self.rho <= 1.0:
            raise ParameterError("rho must lie in [-1, 1]")
        object.__setattr__(
            self, "mu2", implied_mu2(self.market, self.sigma2, self.delta, self.rho)
        )

    @property
    def r(self) -> float:
        return self.market.r

    @property
    def q0_drift(self) -> float:
        """Drift coefficient of the generator used by the indifference problem.

        Under the CAPM closure this is exactly ``-delta``.
        """
        m = self.market
        return self.mu2 - m.r - self.rho * m.sharpe * self.sigma2

    def with_(self, **changes) -> "CollateralModel":
        return replace(self, **changes)


@dataclass(frozen=True)
class LoanTerms:
    """Principal, loan rate, initial collateral value and horizon.

    ``T=None`` means a perpetual loan.
    """

    L: float
    alpha: float
    v0: float
    T: Optional[float] = None

    def __post_init__(self) -> None:
        _finite(L=self.L, alpha=self.alpha, v0=self.v0)
        if self.L <= 0:
            raise ParameterError("principal L must be positive")
        if self.v0 <= 0:
            raise ParameterError("v0 must be positive")
        if self.T is not None and not (math.isfinite(self.T) and self.T > 0):
            raise ParameterError("finite horizon T must be a positive number")

    @property
    def perpetual(self) -> bool:
        return self.T is None

    def strike_at(self, t, r: float):
        """Discounted repayment amount ``exp((alpha - r) t) L``; vectorised in ``t``."""
        return self.L * np.exp((self.alpha - r) * np.asarray(t, dtype=float))

    def require_perpetual_alpha(self, r: float, atol: float = 1e-14) -> None:
        if abs(self.alpha - r) > atol:
            raise AlphaMismatch(
                f"perpetual valuation needs alpha == r (alpha={self.alpha}, r={r})"
            )


@dataclass(frozen=True)
class RiskPreference:
    """Exponential utility ``U(x) = -exp(-gamma x)``."""

    gamma: float

    def __post_init__(self) -> None:
        _finite(gamma=self.gamma)
        if self.gamma <= 0:
            raise ParameterError("gamma must be positive")


def beta(collateral: CollateralModel) -> float:
    """Hitting exponent of the collateral, ``1 + 2 delta / sigma2**2``.

    Evaluated from the general drift expression and cross-checked against
    the CAPM form; the two agree whenever ``mu2`` is equilibrium-consistent.
    """
    m = collateral.market
    s2 = collateral.sigma2
    general = 1.0 - (2.0 / s2) * ((collateral.mu2 - m.r) / s2 - collateral.rho * m.sharpe)
    if general <= 0:
        raise ParameterError(
            "beta <= 0: the repayment option is never exercised in this regime"
        )
    return 1.0 + 2.0 * collateral.delta / s2**2


def complete_market_threshold(L: float, collateral: CollateralModel) -> float:
    """Risk-neutral exercise threshold ``beta L / (beta - 1)``; ``inf`` when delta = 0."""
    if collateral.delta == 0:
        return math.inf
    return (1.0 + collateral.sigma2**2 / (2.0 * collateral.delta)) * L


@dataclass(frozen=True)
class FeeQuote:
    """Loan fee together with the bank's cost and the exercise rule behind it.

    ``boundary`` is the scalar threshold for perpetual loans and an
    :class:`~stockloan.finite.ExerciseBoundary` for finite maturities.
    ``fee == L + bank_cost - v0`` holds up to the documented clamping of
    tiny negative finite-difference fees.
    """

    fee: float
    bank_cost: float
    boundary: object
    p0: float
    L: float
    v0: float
    diagnostics: dict = field(default_factory=dict)
