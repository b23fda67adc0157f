import pytest

from stockloan.finite import GridConfig, Scenario
from stockloan.model import CollateralModel, LoanTerms, MarketModel, RiskPreference


@pytest.fixture
def market():
    return MarketModel(r=0.05, mu1=0.10, sigma1=0.20)


@pytest.fixture
def case4(market):
    """Perpetual, dividend-paying collateral, incomplete market, L = 90."""
    return (
        LoanTerms(L=90, alpha=0.05, v0=100),
        CollateralModel(market, sigma2=0.15, delta=0.05, rho=0.9),
        RiskPreference(0.01),
    )


@pytest.fixture
def case2(market):
    return (
        LoanTerms(L=90, alpha=0.05, v0=100),
        CollateralModel(market, sigma2=0.15, delta=0.0, rho=0.9),
        RiskPreference(0.01),
    )


@pytest.fixture
def finite_base():
    return Scenario(L=100)


@pytest.fixture
def coarse():
    return GridConfig(nv=300, nt=400)


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the acceptance summary."""

    def add(criterion, passed, detail):
        ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}")
        return passed

    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
