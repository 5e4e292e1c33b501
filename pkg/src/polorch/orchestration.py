"""Mixtures of expert policies and the oracle (exact-advantage) learning loop.

Experts are stacked into an array of shape ``(K, num_states, num_actions)``;
state weights ``q`` have shape ``(num_states, K)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .adversarial import MONOTONE_KINDS, Learner, resolve_kind
from .mdp import (
    TabularMdp,
    argmax_sets,
    check_distribution,
    check_policy,
    policy_evaluation,
    q_and_advantage,
    value_at,
    value_iteration,
)


def check_experts(mdp: TabularMdp, experts) -> np.ndarray:
    experts = np.asarray(experts, dtype=float)
    if experts.ndim != 3 or experts.shape[1:] != (mdp.num_states, mdp.num_actions):
        raise ValueError("experts must have shape (K, num_states, num_actions)")
    for pi in experts:
        check_policy(mdp, pi)
    return experts


def check_weights(q: np.ndarray, num_states: int, K: int, atol: float = 1e-12) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if q.shape != (num_states, K):
        raise ValueError(f"weights must have shape {(num_states, K)}")
    if q.min() < 0 or np.abs(q.sum(axis=1) - 1.0).max() > atol:
        raise ValueError("weight rows must lie on the simplex")
    return q


def uniform_weights(num_states: int, K: int) -> np.ndarray:
    return np.full((num_states, K), 1.0 / K)


def mix_policy(q: np.ndarray, experts: np.ndarray) -> np.ndarray:
    """``qPi(a|s) = sum_k q(k|s) pi_k(a|s)``."""
    experts = np.asarray(experts, dtype=float)
    q = np.asarray(q, dtype=float)
    if q.shape != (experts.shape[1], experts.shape[0]):
        raise ValueError("weights and experts disagree on dimensions")
    return np.einsum("sk,ksa->sa", q, experts)


def lift_mdp(mdp: TabularMdp, experts: np.ndarray) -> TabularMdp:
    """MDP whose actions are the experts."""
    experts = check_experts(mdp, experts)
    K, S, A = experts.shape
    # W[s*K + k, s*A + a] = pi_k(a|s)
    rows = (np.arange(S)[:, None, None] * K + np.arange(K)[None, :, None]).repeat(A, axis=2)
    cols = (np.arange(S)[:, None, None] * A + np.arange(A)[None, None, :]).repeat(K, axis=1)
    vals = experts.transpose(1, 0, 2)
    nz = vals != 0
    W = sp.csr_matrix((vals[nz], (rows[nz], cols[nz])), shape=(S * K, S * A))
    P = (W @ mdp.transition).tocsr()
    R = np.einsum("ksa,sa->sk", experts, mdp.reward)
    R = np.clip(R, 0.0, mdp.reward_max)
    return TabularMdp(P, R, mdp.discount, mdp.reward_max, np.ones((S, K), dtype=bool))


def expert_advantages(A: np.ndarray, experts: np.ndarray) -> np.ndarray:
    """``abar(s, k) = sum_a pi_k(a|s) A(s, a)``."""
    return np.einsum("ksa,sa->sk", experts, A)


@dataclass
class Orchestration:
    """Best state-dependent mixture of the experts (Dirac weights)."""

    weights: np.ndarray
    values: np.ndarray
    q_values: np.ndarray

    @property
    def choice(self) -> np.ndarray:
        return self.weights.argmax(axis=1)

    def appearance_rates(self) -> np.ndarray:
        K = self.weights.shape[1]
        return np.bincount(self.choice, minlength=K) / self.weights.shape[0]


def optimal_orchestration(mdp: TabularMdp, experts: np.ndarray) -> Orchestration:
    experts = np.asarray(experts, dtype=float)
    if experts.shape[0] == 1:
        V = policy_evaluation(mdp, experts[0])
        S = mdp.num_states
        Q = (experts[0] * q_and_advantage(mdp, V)[0]).sum(axis=1)[:, None]
        return Orchestration(np.ones((S, 1)), V, Q)
    lifted = lift_mdp(mdp, experts)
    V, Q, pi = value_iteration(lifted)
    return Orchestration(pi, V, Q)


@dataclass
class ApproximationError:
    error: float
    per_state_error: np.ndarray
    certificates: list  # per state: tuple of expert indices, or None
    v_star: np.ndarray
    v_orchestrated: np.ndarray

    @property
    def certified_everywhere(self) -> bool:
        return all(c is not None for c in self.certificates)


def support_certificates(mdp: TabularMdp, experts: np.ndarray, Q_star: np.ndarray, tol: float = 1e-7) -> list:
    """Experts whose support at ``s`` lies inside ``argmax Q_star(s, .)``.

    A convex combination has the union of supports of its positive-weight
    members, so a valid combination exists iff some single expert qualifies.
    """
    best = argmax_sets(mdp, Q_star, tol)
    outside = (np.asarray(experts) > 0) & ~best[None, :, :]
    ok = ~outside.any(axis=2)  # (K, S)
    certs = []
    for s in range(mdp.num_states):
        ks = np.flatnonzero(ok[:, s])
        certs.append(tuple(int(k) for k in ks) if ks.size else None)
    return certs


def approximation_error(mdp: TabularMdp, experts, mu0, tol: float = 1e-7) -> ApproximationError:
    experts = check_experts(mdp, experts)
    mu0 = check_distribution(mu0, mdp.num_states)
    V_star, Q_star, _ = value_iteration(mdp)
    orch = optimal_orchestration(mdp, experts)
    per_state = V_star - orch.values
    return ApproximationError(
        error=value_at(per_state, mu0),
        per_state_error=per_state,
        certificates=support_certificates(mdp, experts, Q_star, tol),
        v_star=V_star,
        v_orchestrated=orch.values,
    )


@dataclass
class OracleRunRecord:
    """Values of the weights ``q_1, ..., q_T`` produced after each update.

    ``initial_value`` is the value of the uniform starting weights ``q_0``.
    """

    kind: str
    params: dict
    values: np.ndarray  # V_{q_t Pi}(mu0), t = 1..T
    target_value: float  # V_{q* Pi}(mu0)
    optimal_value: float  # V*(mu0)
    initial_value: float = float("nan")
    weights: list = field(default_factory=list, repr=False)  # q_0..q_T, when recorded

    @property
    def T(self) -> int:
        return len(self.values)

    def cesaro_regret(self) -> float:
        return self.target_value - float(np.mean(self.values))

    def last_regret(self) -> float:
        return self.target_value - float(self.values[-1])

    def all_values(self) -> np.ndarray:
        return np.concatenate(([self.initial_value], self.values))

    def decreases(self, tol: float = 1e-8) -> int:
        return int(np.sum(np.diff(self.all_values()) < -tol))


def run_oracle_loop(
    mdp: TabularMdp,
    experts,
    kind: str,
    params: dict | None,
    T: int,
    mu0,
    gain_bound: float | None = None,
    record_weights: bool = False,
    targets: tuple[float, float] | None = None,
) -> OracleRunRecord:
    """Exact-advantage orchestration: one learner per state fed ``abar(s, .)``.

    Runs ``T`` updates from uniform weights.  ``gain_bound`` defaults to
    ``reward_max / (1 - gamma)``, the range of the expert advantages.
    ``targets`` may pass precomputed ``(V_{q*Pi}(mu0), V*(mu0))``.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    kind = resolve_kind(kind)
    params = dict(params or {})
    experts = check_experts(mdp, experts)
    mu0 = check_distribution(mu0, mdp.num_states)
    K, S, _ = experts.shape
    if gain_bound is None:
        gain_bound = mdp.value_max
    learner = Learner(kind, K, gain_bound, batch=S, **params)
    if targets is None:
        target = value_at(optimal_orchestration(mdp, experts).values, mu0)
        optimal = value_at(value_iteration(mdp)[0], mu0)
    else:
        target, optimal = targets
    values = np.empty(T + 1)
    history = []
    V = None
    for t in range(T + 1):
        q = learner.weights
        if record_weights:
            history.append(q.copy())
        pi = mix_policy(q, experts)
        V = policy_evaluation(mdp, pi, v0=V)
        values[t] = value_at(V, mu0)
        if t == T:
            break
        _, A = q_and_advantage(mdp, V)
        abar = expert_advantages(A, experts)
        np.clip(abar, -gain_bound, gain_bound, out=abar)
        learner.observe(abar)
    return OracleRunRecord(kind, params, values[1:], target, optimal, float(values[0]), history)
