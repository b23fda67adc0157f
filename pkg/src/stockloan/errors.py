"""Exception hierarchy for the stock-loan engine."""


class StockLoanError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(StockLoanError, ValueError):
    """Model inputs outside the supported regime."""


class AlphaMismatch(ParameterError):
    """Perpetual valuation requires the loan rate to equal the riskless rate."""


class NonConvergence(StockLoanError):
    """A root finder ran out of iterations."""


class InvalidGrid(StockLoanError, ValueError):
    pass


class PsorDivergence(StockLoanError):
    """Projected SOR failed to meet its tolerance within ``max_iter`` sweeps."""


class BoundaryNotFound(StockLoanError):
    pass


class InvalidBoundary(StockLoanError, ValueError):
    pass


class StepCountTooSmall(StockLoanError, ValueError):
    pass


class NegativeFee(StockLoanError):
    """Computed fee is negative beyond the clamping allowance."""


class ConfigError(StockLoanError):
    """Unreadable or inconsistent run configuration."""
