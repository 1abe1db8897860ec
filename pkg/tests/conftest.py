import numpy as np
import pytest
from threadpoolctl import threadpool_limits

# single-threaded BLAS keeps every run bitwise reproducible
_LIMITS = threadpool_limits(limits=1)

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
