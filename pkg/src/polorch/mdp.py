"""Exact computations on finite discounted MDPs.

Transitions are stored as a sparse matrix with one row per (state, action)
pair, row index ``s * num_actions + a``.  Policies, value functions and
advantage tables are plain numpy arrays:

* policy: ``(num_states, num_actions)``, rows on the simplex
* V: ``(num_states,)``
* Q, A: ``(num_states, num_actions)``
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DENSE_STATE_LIMIT = 8192
SOLVE_TOL = 1e-9
MAX_SWEEPS = 1_000_000


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """A finite MDP with mean rewards in ``[0, reward_max]``.

    ``admissible[s, a]`` marks allowed actions.  Rows of ``transition`` for
    inadmissible pairs are ignored (and usually empty).
    """

    transition: sp.csr_matrix
    reward: np.ndarray
    discount: float
    reward_max: float
    admissible: np.ndarray

    def __post_init__(self):
        reward = np.asarray(self.reward, dtype=float)
        admissible = np.asarray(self.admissible, dtype=bool)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "admissible", admissible)
        object.__setattr__(self, "transition", sp.csr_matrix(self.transition))
        S, A = reward.shape
        if admissible.shape != (S, A):
            raise ValueError("admissible mask must match reward shape")
        if self.transition.shape != (S * A, S):
            raise ValueError(f"transition must have shape {(S * A, S)}")
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie in (0, 1)")
        if self.reward_max <= 0:
            raise ValueError("reward_max must be positive")
        if not admissible.any(axis=1).all():
            raise ValueError("every state needs at least one admissible action")
        if self.transition.data.size and self.transition.data.min() < 0:
            raise ValueError("negative transition probability")
        row_sums = np.asarray(self.transition.sum(axis=1)).ravel().reshape(S, A)
        if np.abs(row_sums[admissible] - 1.0).max() > 1e-12:
            raise ValueError("transition rows of admissible pairs must sum to 1")
        r = reward[admissible]
        if r.min() < 0 or r.max() > self.reward_max:
            raise ValueError("rewards must lie in [0, reward_max]")

    @property
    def num_states(self) -> int:
        return self.reward.shape[0]

    @property
    def num_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def value_max(self) -> float:
        return self.reward_max / (1.0 - self.discount)

    def expected_next(self, V: np.ndarray) -> np.ndarray:
        """``(P V)(s, a) = sum_s' T(s'|s,a) V(s')`` as an ``(S, A)`` array."""
        return (self.transition @ V).reshape(self.num_states, self.num_actions)

    def policy_kernel(self, pi: np.ndarray) -> sp.csr_matrix:
        """State-to-state kernel ``P_pi``."""
        S, A = self.num_states, self.num_actions
        rows = np.repeat(np.arange(S), A)
        mix = sp.csr_matrix((pi.ravel(), (rows, np.arange(S * A))), shape=(S, S * A))
        return (mix @ self.transition).tocsr()


def check_policy(mdp: TabularMdp, pi: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(f"policy shape {pi.shape} does not match the MDP")
    if pi.min() < 0:
        raise ValueError("policy has negative probabilities")
    if np.abs(pi.sum(axis=1) - 1.0).max() > atol:
        raise ValueError("policy rows must sum to 1")
    if np.any(pi[~mdp.admissible] > 0):
        raise ValueError("policy puts mass on inadmissible actions")
    return pi


def check_distribution(mu: np.ndarray, size: int, atol: float = 1e-9) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (size,) or mu.min() < -atol or abs(mu.sum() - 1.0) > atol:
        raise ValueError("expected a probability vector of length %d" % size)
    return mu


def _solve(matrix_fn, rhs, apply_fn, v0=None, method="auto", tol=SOLVE_TOL):
    """Solve ``x = rhs + apply_fn(x)`` (a gamma-contraction).

    ``matrix_fn`` builds the sparse system matrix for the direct path.
    """
    n = rhs.shape[0]
    if method == "auto":
        method = "direct" if n <= DENSE_STATE_LIMIT else "iterative"
    if method == "direct":
        x = spla.spsolve(matrix_fn().tocsc(), rhs)
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if np.abs(rhs + apply_fn(x) - x).max() <= tol:
            return x
        v0 = x
    x = np.zeros(n) if v0 is None else np.array(v0, dtype=float)
    for _ in range(MAX_SWEEPS):
        nxt = rhs + apply_fn(x)
        if np.abs(nxt - x).max() <= tol:
            return nxt
        x = nxt
    raise SolverError("fixed-point sweeps did not reach the residual tolerance")


def policy_evaluation(
    mdp: TabularMdp, pi: np.ndarray, v0=None, method="auto", tol: float = SOLVE_TOL
) -> np.ndarray:
    """Value function of ``pi`` from the Bellman consistency equation.

    ``method`` is ``"direct"`` (sparse LU), ``"iterative"`` (fixed-point
    sweeps from ``v0``) or ``"auto"``, which goes direct up to
    ``DENSE_STATE_LIMIT`` states.  Either way the sup-norm Bellman residual of
    the result is at most ``tol``.
    """
    pi = check_policy(mdp, pi)
    g = mdp.discount
    r_pi = (pi * mdp.reward).sum(axis=1)

    P_pi = mdp.policy_kernel(pi)

    def apply(V):
        return g * (P_pi @ V)

    def matrix():
        return sp.identity(mdp.num_states, format="csr") - g * P_pi

    return _solve(matrix, r_pi, apply, v0=v0, method=method, tol=tol)


def q_and_advantage(mdp: TabularMdp, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Q and advantage tables of the policy whose value function is ``V``.

    Q is zero on inadmissible pairs; A = Q - V everywhere.
    """
    Q = mdp.reward + mdp.discount * mdp.expected_next(V)
    Q = np.where(mdp.admissible, Q, 0.0)
    return Q, Q - V[:, None]


def advantage_of_distribution(A: np.ndarray, s: int, nu: np.ndarray, admissible=None) -> float:
    nu = np.asarray(nu, dtype=float)
    if nu.shape != A.shape[1:] or nu.min() < -1e-12 or abs(nu.sum() - 1.0) > 1e-9:
        raise ValueError("nu must be a probability vector over actions")
    if admissible is not None and np.any(nu[~np.asarray(admissible)[s]] > 0):
        raise ValueError("nu puts mass on inadmissible actions")
    return float(nu @ A[s])


def greedy_policy(mdp: TabularMdp, Q: np.ndarray, tie_tol: float | None = None) -> np.ndarray:
    """Dirac policy on the lowest-index action within ``tie_tol`` of the max."""
    if tie_tol is None:
        tie_tol = 1e-12 * max(1.0, mdp.value_max)
    masked = np.where(mdp.admissible, Q, -np.inf)
    best = masked.max(axis=1, keepdims=True)
    choice = np.argmax(masked >= best - tie_tol, axis=1)
    pi = np.zeros_like(mdp.reward)
    pi[np.arange(mdp.num_states), choice] = 1.0
    return pi


def bellman_optimality_residual(mdp: TabularMdp, V: np.ndarray) -> float:
    Q = mdp.reward + mdp.discount * mdp.expected_next(V)
    return float(np.abs(np.where(mdp.admissible, Q, -np.inf).max(axis=1) - V).max())


def value_iteration(mdp: TabularMdp, max_policy_steps: int = 1000):
    """Optimal value, Q-function and greedy optimal policy.

    Runs value-iteration sweeps for a warm start, then policy iteration with
    exact evaluations until the greedy policy is stable.
    Returns ``(V_star, Q_star, pi_star)``.
    """
    g = mdp.discount
    V = np.zeros(mdp.num_states)
    for _ in range(50):
        Q = mdp.reward + g * mdp.expected_next(V)
        V = np.where(mdp.admissible, Q, -np.inf).max(axis=1)
    pi = greedy_policy(mdp, np.where(mdp.admissible, mdp.reward + g * mdp.expected_next(V), 0.0))
    for _ in range(max_policy_steps):
        V = policy_evaluation(mdp, pi, v0=V)
        Q, _ = q_and_advantage(mdp, V)
        masked = np.where(mdp.admissible, Q, -np.inf)
        current = (pi * Q).sum(axis=1)
        tol = 1e-12 * max(1.0, mdp.value_max)
        if np.all(masked.max(axis=1) <= current + tol):
            break
        pi = greedy_policy(mdp, Q)
    else:
        raise SolverError("policy iteration did not stabilise")
    pi = greedy_policy(mdp, Q)
    V = policy_evaluation(mdp, pi, v0=V)
    Q, _ = q_and_advantage(mdp, V)
    return V, Q, pi


def argmax_sets(mdp: TabularMdp, Q: np.ndarray, tol: float = 1e-7) -> np.ndarray:
    """Boolean ``(S, A)`` mask of actions within ``tol`` of ``max_a Q(s, a)``."""
    masked = np.where(mdp.admissible, Q, -np.inf)
    return masked >= masked.max(axis=1, keepdims=True) - tol


def discounted_visitation(mdp: TabularMdp, pi: np.ndarray, mu0: np.ndarray, method="auto") -> np.ndarray:
    """Normalised discounted state occupancy of ``pi`` started from ``mu0``."""
    pi = check_policy(mdp, pi)
    mu0 = check_distribution(mu0, mdp.num_states)
    g = mdp.discount
    P_pi = mdp.policy_kernel(pi)
    P_T = P_pi.T.tocsr()

    def apply(mu):
        return g * (P_T @ mu)

    def matrix():
        return sp.identity(mdp.num_states, format="csr") - g * P_T

    mu = _solve(matrix, (1.0 - g) * mu0, apply, method=method)
    return np.clip(mu, 0.0, None)


def value_at(V: np.ndarray, mu0: np.ndarray) -> float:
    """Linear extension of a value function to an initial distribution."""
    return float(np.dot(mu0, V))


def performance_difference(mdp: TabularMdp, pi, pi_prime, mu0) -> tuple[float, float]:
    """Both sides of the performance-difference identity at ``mu0``.

    ``lhs = V_pi(mu0) - V_pi'(mu0)`` from two evaluations;
    ``rhs`` from the visitation of ``pi`` and the advantage of ``pi'``.
    """
    V = policy_evaluation(mdp, pi)
    V_prime = policy_evaluation(mdp, pi_prime)
    lhs = value_at(V, mu0) - value_at(V_prime, mu0)
    _, A_prime = q_and_advantage(mdp, V_prime)
    mu = discounted_visitation(mdp, pi, mu0)
    rhs = float(mu @ (np.asarray(pi) * A_prime).sum(axis=1)) / (1.0 - mdp.discount)
    return lhs, rhs


def random_mdp(
    num_states: int,
    num_actions: int,
    discount: float,
    rng,
    reward_max: float = 1.0,
    branching: int | None = None,
) -> TabularMdp:
    """Random dense-ish MDP with Dirichlet transitions and uniform rewards."""
    rng = np.random.default_rng(rng)
    S, A = num_states, num_actions
    P = rng.dirichlet(np.ones(S), size=S * A)
    if branching is not None and branching < S:
        for row in P:
            drop = rng.choice(S, size=S - branching, replace=False)
            row[drop] = 0.0
            row /= row.sum()
    R = rng.uniform(0.0, reward_max, size=(S, A))
    return TabularMdp(sp.csr_matrix(P), R, discount, reward_max, np.ones((S, A), dtype=bool))


def random_policy(mdp: TabularMdp, rng, concentration: float = 1.0) -> np.ndarray:
    rng = np.random.default_rng(rng)
    pi = rng.dirichlet(np.full(mdp.num_actions, concentration), size=mdp.num_states)
    pi = np.where(mdp.admissible, pi, 0.0)
    return pi / pi.sum(axis=1, keepdims=True)
