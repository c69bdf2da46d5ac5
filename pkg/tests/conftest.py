import pytest

from gencoq.market_env import GenCoParams, MarketParams

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def market():
    return MarketParams(102.0, 0.04)


@pytest.fixture
def genco_x():
    return GenCoParams(0.001, 2.0, 10000.0, 2000.0, "x")


@pytest.fixture
def genco_y():
    return GenCoParams(0.002, 3.0, 11000.0, 1800.0, "y")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
