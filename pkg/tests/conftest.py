import numpy as np
import pytest

from idnca import io as nca_io

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def gecko20():
    return nca_io.builtin_gecko(20)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def record_acceptance(line: str):
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
