import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sgfluid.lattice import build_lattice

settings.register_profile("pkg", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")

_ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log():
    """Append one summary line per criterion; printed at the end of the session."""

    def log(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return log


@pytest.fixture(scope="session")
def lat4():
    return build_lattice(4, 1.0)


@pytest.fixture(scope="session")
def lat8():
    return build_lattice(8, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
