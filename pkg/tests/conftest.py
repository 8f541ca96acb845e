import pytest

from hflandau.config import RunConfig
from hflandau.dispersion import build_dispersion
from hflandau.model import EquilibriumProfile, PotentialPair

_LINES = []


def record_line(line):
    _LINES.append(line)


def record_outcome(outcome):
    record_line(outcome.line())


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def profile():
    return EquilibriumProfile.gaussian()


@pytest.fixture(scope="session")
def potentials():
    return PotentialPair.make(("yukawa", 1.0, 1.0), ("gaussian", 0.05, 1.0))


@pytest.fixture(scope="session")
def field1(profile, potentials):
    return RunConfig(dimension=1).field(for_scan=True)


@pytest.fixture(scope="session")
def field3(profile, potentials):
    return build_dispersion(profile, potentials, d=3, r_max=12.0)
