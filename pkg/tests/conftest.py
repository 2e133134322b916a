import warnings

import numpy as np
import pytest

warnings.filterwarnings("ignore", message=".*TBB threading layer.*")

from cdcpairs.source import Source  # noqa: E402

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def source():
    return Source()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
