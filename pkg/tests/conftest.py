import numpy as np
import pytest

from covdet.solver_core import SolverState
from covdet.system_model import make_instance, simulate_received


@pytest.fixture
def small_instance():
    return make_instance("hex", 3, 12, 2, 8, seed=11)


@pytest.fixture
def small_state(small_instance):
    covs = simulate_received(small_instance, 64)
    a = np.random.default_rng(5).uniform(0, 1, small_instance.total_devices)
    return SolverState.from_instance(small_instance, covs, a=a)


def dense_objective(S, G, a, sigma2, sig_hat):
    """Independent evaluation with numpy slogdet and explicit inverses."""
    L = S.shape[0]
    total = 0.0
    for b in range(G.shape[0]):
        sig = S @ np.diag(G[b] * a) @ S.conj().T + sigma2 * np.eye(L)
        total += np.linalg.slogdet(sig)[1] + np.real(np.trace(np.linalg.inv(sig) @ sig_hat[b]))
    return total


def dense_objective_difference(S, G, a_plus, a_minus, sigma2, sig_hat):
    """F(a_plus) - F(a_minus) without subtracting two large objective values.

    Uses logdet(A) - logdet(B) = logdet(B^-1 A) and
    A^-1 - B^-1 = -A^-1 (A - B) B^-1, with A - B formed from the change in a.
    """
    L = S.shape[0]
    total = 0.0
    for b in range(G.shape[0]):
        A = S @ np.diag(G[b] * a_plus) @ S.conj().T + sigma2 * np.eye(L)
        Bm = S @ np.diag(G[b] * a_minus) @ S.conj().T + sigma2 * np.eye(L)
        D = S @ np.diag(G[b] * (a_plus - a_minus)) @ S.conj().T
        Ai, Bi = np.linalg.inv(A), np.linalg.inv(Bm)
        total += np.linalg.slogdet(Bi @ A)[1] - np.real(np.trace(Ai @ D @ Bi @ sig_hat[b]))
    return total


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict = {}


def report(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
