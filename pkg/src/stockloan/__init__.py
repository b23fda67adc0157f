"""Stock-loan valuation with a partially hedging, exponential-utility borrower."""

__version__ = "0.1.0"

from .errors import StockLoanError
from .finite import ExerciseBoundary, GridConfig, Scenario, fee_finite
from .model import CollateralModel, FeeQuote, LoanTerms, MarketModel, RiskPreference
from .perpetual import complete_market_fee, fee

__all__ = [
    "CollateralModel",
    "ExerciseBoundary",
    "FeeQuote",
    "GridConfig",
    "LoanTerms",
    "MarketModel",
    "RiskPreference",
    "Scenario",
    "StockLoanError",
    "complete_market_fee",
    "fee",
    "fee_finite",
]
