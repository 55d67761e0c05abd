import numpy as np
import pytest

# collected by tests/test_acceptance.py, echoed at the end of the run
ACCEPTANCE_LINES = []


def rand_hermitian(rng, n, complex_entries=False, scale=1.0):
    m = rng.standard_normal((n, n))
    if complex_entries:
        m = m + 1j * rng.standard_normal((n, n))
    return scale * (m + m.conj().T) / 2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
