import numpy as np
import pytest
import scipy.sparse as sp

from polorch.mdp import TabularMdp, random_mdp, random_policy

ACCEPTANCE_LINES = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


def two_state_mdp(gamma=0.9):
    """s0: a0 stays (r=1), a1 moves to s1 (r=0); s1: a0 moves to s0 (r=0), a1 stays (r=2)."""
    P = np.zeros((4, 2))
    P[0, 0] = 1.0
    P[1, 1] = 1.0
    P[2, 0] = 1.0
    P[3, 1] = 1.0
    R = np.array([[1.0, 0.0], [0.0, 2.0]])
    return TabularMdp(sp.csr_matrix(P), R, gamma, 2.0, np.ones((2, 2), dtype=bool))


def random_problem(seed, num_states=5, num_actions=3, K=3, gamma=0.8, concentration=1.0):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(num_states, num_actions, gamma, rng)
    experts = np.stack([random_policy(mdp, rng, concentration) for _ in range(K)])
    return mdp, experts, rng


@pytest.fixture
def small_problem():
    return random_problem(7)
