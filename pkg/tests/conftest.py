import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def dense_mme(X, Z, y, Kinv, lam):
    """Full block system solved by explicit inversion; independent of the library solvers."""
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    lhs = np.block([[X.T @ X, X.T @ Z], [Z.T @ X, Z.T @ Z + lam * Kinv]])
    rhs = np.concatenate([X.T @ y, Z.T @ y])
    sol = np.linalg.inv(lhs) @ rhs
    return sol[: X.shape[1]], sol[X.shape[1]:]


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
