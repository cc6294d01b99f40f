import numpy as np
import pytest

from reslab.instances import trial_rng


@pytest.fixture
def rng():
    return trial_rng(20240, 0)


def fd_grad(fun, theta, step=1e-5):
    """Central differences of a scalar function, one coordinate at a time."""
    g = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = step * (1.0 + abs(theta[i]))
        g[i] = (fun(theta + e) - fun(theta - e)) / (2.0 * e[i])
    return g


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line[1])
