"""Independent reference computations used by the tests.

Nothing here calls into the package's solvers: values come from truncated
power series, dense linear algebra, exhaustive enumeration or simulation.
"""
import itertools

import numpy as np


def dense_kernel(mdp):
    """``P[s, a, s']`` as a dense array."""
    S, A = mdp.num_states, mdp.num_actions
    return mdp.transition.toarray().reshape(S, A, S)


def power_series_value(mdp, pi, tol=1e-13):
    """``V = sum_k gamma^k P_pi^k r_pi`` summed until the terms vanish."""
    P = dense_kernel(mdp)
    P_pi = np.einsum("sa,sat->st", pi, P)
    term = (pi * mdp.reward).sum(axis=1)
    V = np.zeros_like(term)
    while np.abs(term).max() > tol:
        V += term
        term = mdp.discount * P_pi @ term
    return V


def dense_solve_value(mdp, pi):
    P = dense_kernel(mdp)
    P_pi = np.einsum("sa,sat->st", pi, P)
    r_pi = (pi * mdp.reward).sum(axis=1)
    return np.linalg.solve(np.eye(mdp.num_states) - mdp.discount * P_pi, r_pi)


def deterministic_policies(mdp):
    choices = [np.flatnonzero(mdp.admissible[s]) for s in range(mdp.num_states)]
    for combo in itertools.product(*choices):
        pi = np.zeros((mdp.num_states, mdp.num_actions))
        pi[np.arange(mdp.num_states), combo] = 1.0
        yield pi


def brute_force_optimal_value(mdp):
    """State-wise maximum of the values of all deterministic policies."""
    best = None
    for pi in deterministic_policies(mdp):
        V = dense_solve_value(mdp, pi)
        best = V if best is None else np.maximum(best, V)
    return best


def brute_force_best_mixture_value(mdp, experts):
    """State-wise best value over all state-wise choices of a single expert."""
    K, S, _ = experts.shape
    best = None
    for combo in itertools.product(range(K), repeat=S):
        pi = experts[list(combo), np.arange(S), :]
        V = dense_solve_value(mdp, pi)
        best = V if best is None else np.maximum(best, V)
    return best


def monte_carlo_value(mdp, pi, s0, episodes, horizon, rng):
    """Mean discounted return over simulated truncated episodes from ``s0``."""
    P = dense_kernel(mdp)
    S, A = mdp.num_states, mdp.num_actions
    total = np.zeros(episodes)
    s = np.full(episodes, s0)
    disc = 1.0
    for _ in range(horizon):
        u = rng.random(episodes)
        a = (np.cumsum(pi[s], axis=1) <= u[:, None]).sum(axis=1).clip(max=A - 1)
        total += disc * mdp.reward[s, a]
        u = rng.random(episodes)
        s = (np.cumsum(P[s, a], axis=1) <= u[:, None]).sum(axis=1).clip(max=S - 1)
        disc *= mdp.discount
    return total.mean(), total.std(ddof=1) / np.sqrt(episodes)


def brute_force_projection(v):
    """Euclidean projection onto the simplex by enumerating supports."""
    v = np.asarray(v, dtype=float)
    K = v.size
    best, best_dist = None, np.inf
    for size in range(1, K + 1):
        for support in itertools.combinations(range(K), size):
            idx = list(support)
            theta = (v[idx].sum() - 1.0) / size
            w = np.zeros(K)
            w[idx] = v[idx] - theta
            if w.min() < -1e-12:
                continue
            dist = np.sum((w - v) ** 2)
            if dist < best_dist:
                best, best_dist = w, dist
    return best


def exhaustive_regret(G, W):
    """Regret against each fixed expert, maximised, by explicit loops."""
    T, K = G.shape
    learner = sum(float(np.dot(W[t], G[t])) for t in range(T))
    return max(sum(G[t, k] for t in range(T)) - learner for k in range(K))
