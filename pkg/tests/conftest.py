import pytest

from bhlineage import OffspringDistribution, genfun

CRITICAL = (0.5, 0.0, 0.5)
YULE = (0.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def critical():
    return OffspringDistribution(CRITICAL)


@pytest.fixture(scope="session")
def yule():
    return OffspringDistribution(YULE)


@pytest.fixture(scope="session")
def critical_table(critical):
    return genfun.build_markov(critical, 1.0, 2.0)


@pytest.fixture(scope="session")
def yule_table(yule):
    return genfun.build_markov(yule, 1.0, 1.0)


def pytest_terminal_summary(terminalreporter):
    import sys
    lines = getattr(sys.modules.get("test_acceptance"), "LINES", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
