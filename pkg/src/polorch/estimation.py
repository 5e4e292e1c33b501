"""Truncated-rollout estimators and the estimated-advantage learning loop.

Randomness is derived from a root seed and a ``(round, purpose)`` key, and
every draw inside a round is made in a fixed vectorised order, so a run is a
pure function of its root seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adversarial import Learner, resolve_kind
from .mdp import TabularMdp, check_distribution, policy_evaluation, value_at, value_iteration
from .orchestration import OracleRunRecord, check_experts, mix_policy, optimal_orchestration

MASKED = "masked"
LAZY = "lazy"
MODES = (MASKED, LAZY)

# purpose codes for stream derivation
PURPOSE_MASK = 0
PURPOSE_ROLLOUT = 1
PURPOSE_TRAJECTORY = 2
PURPOSE_INIT = 3


def horizon_for_epsilon(gamma: float, epsilon: float) -> int:
    """Smallest ``H >= 1`` with ``gamma**H <= epsilon * (1 - gamma)``.

    The comparison carries a relative slack of 1e-12 so that an ``epsilon``
    computed as ``gamma**H / (1 - gamma)`` maps back to ``H``.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    target = epsilon * (1.0 - gamma) * (1 + 1e-12)
    if target >= 1.0:
        return 1
    H = max(1, math.ceil(math.log(target) / math.log(gamma)))
    while gamma**H > target:
        H += 1
    while H > 1 and gamma ** (H - 1) <= target:
        H -= 1
    return H


def stream(root_seed: int, t: int, purpose: int) -> np.random.Generator:
    """Generator for round ``t`` and a purpose code; equal keys give equal streams."""
    return np.random.default_rng(np.random.SeedSequence(int(root_seed), spawn_key=(int(t), int(purpose))))


@dataclass(frozen=True)
class EstimationConfig:
    """Precision ``epsilon`` (normalised scale), horizon, mask rate ``kappa``, mode."""

    epsilon: float
    horizon: int
    kappa: float = 1.0
    mode: str = MASKED
    repeats: int = 1

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.horizon < 1:
            raise ValueError("horizon must be a positive integer")
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")

    @classmethod
    def for_discount(cls, gamma: float, epsilon: float, kappa: float = 1.0, mode: str = MASKED, repeats: int = 1):
        return cls(epsilon, horizon_for_epsilon(gamma, epsilon), kappa, mode, repeats)

    def check(self, gamma: float) -> "EstimationConfig":
        """Raise unless the horizon achieves the precision at discount ``gamma``."""
        if gamma**self.horizon / (1.0 - gamma) > self.epsilon * (1 + 1e-12):
            raise ValueError(f"horizon {self.horizon} is too short for epsilon {self.epsilon} at gamma {gamma}")
        return self


class MdpSampler:
    """Draws successor states and actions of a tabular MDP in batches.

    Rows with at most ``PADDED_WIDTH`` successors are stored as a padded
    ``(rows, width)`` table of cumulative probabilities; wider kernels fall
    back to a binary search over one monotone array.
    """

    PADDED_WIDTH = 32

    def __init__(self, mdp: TabularMdp):
        self.mdp = mdp
        P = mdp.transition.tocsr()
        P.sort_indices()
        counts = np.diff(P.indptr)
        n_rows = P.shape[0]
        row_of = np.repeat(np.arange(n_rows), counts)
        local = np.cumsum(P.data)
        starts = np.concatenate(([0.0], local))[P.indptr[:-1]]
        within = local - np.repeat(starts, counts)
        self._indptr = P.indptr
        self._indices = P.indices
        width = int(counts.max(initial=1))
        if width <= self.PADDED_WIDTH:
            slot = np.arange(P.nnz) - P.indptr[row_of]
            self._cum_pad = np.full((n_rows, width), np.inf)
            self._cum_pad[row_of, slot] = within
            self._next_pad = np.zeros((n_rows, width), dtype=np.int64)
            self._next_pad[row_of, slot] = P.indices
            self._last_slot = np.maximum(counts - 1, 0)
            self._row_total = np.where(counts > 0, self._cum_pad[np.arange(n_rows), np.maximum(counts - 1, 0)], 0.0)
        else:
            self._cum_pad = None
            # row r occupies (r, r + 1]: one monotone array for all rows
            self._cum = row_of + within
            self._row_total = np.zeros(n_rows)
            nonempty = counts > 0
            self._row_total[nonempty] = within[P.indptr[1:][nonempty] - 1]

    def next_states(self, states: np.ndarray, actions: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        rows = np.asarray(states) * self.mdp.num_actions + np.asarray(actions)
        u = rng.random(rows.shape) * self._row_total[rows]
        if self._cum_pad is not None:
            c = self._cum_pad[rows]
            slot = (c <= u[:, None]).sum(axis=1)
            slot = np.minimum(slot, self._last_slot[rows])
            return self._next_pad[rows, slot]
        pos = np.searchsorted(self._cum, rows + u, side="right")
        pos = np.clip(pos, self._indptr[rows], self._indptr[rows + 1] - 1)
        return self._indices[pos]

    @staticmethod
    def actions(pi_cum: np.ndarray, states: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Sample from the policy whose row-wise cumulative sums are ``pi_cum``."""
        c = pi_cum[states]
        u = rng.random(len(states)) * c[:, -1]
        a = (c <= u[:, None]).sum(axis=1)
        return np.minimum(a, c.shape[1] - 1)


def policy_cumsum(pi: np.ndarray) -> np.ndarray:
    return np.cumsum(pi, axis=1)


def rollout_returns(
    sampler: MdpSampler, pi: np.ndarray, states, actions, horizon: int, rng: np.random.Generator, pi_cum=None
) -> np.ndarray:
    """H-step discounted returns of one trajectory per ``(state, action)`` start.

    The first action is forced, later ones follow ``pi``.  Rewards are the
    (deterministic) mean rewards of the MDP.
    """
    mdp = sampler.mdp
    s = np.asarray(states, dtype=np.int64).copy()
    a = np.asarray(actions, dtype=np.int64).copy()
    if s.size and not mdp.admissible[s, a].all():
        raise ValueError("rollout started with an inadmissible action")
    if pi_cum is None:
        pi_cum = policy_cumsum(pi)
    out = np.zeros(s.shape)
    disc = 1.0
    for tau in range(horizon):
        out += disc * mdp.reward[s, a]
        if tau == horizon - 1:
            break
        s = sampler.next_states(s, a, rng)
        a = sampler.actions(pi_cum, s, rng)
        disc *= mdp.discount
    return out


def rollout_q_estimate(sampler: MdpSampler, pi: np.ndarray, s0: int, a0: int, horizon: int, rng) -> float:
    return float(rollout_returns(sampler, pi, [s0], [a0], horizon, rng)[0])


@dataclass
class AdvantageEstimate:
    atilde: np.ndarray  # (S, K)
    mask: np.ndarray  # (S,) bool
    q_tilde: np.ndarray = field(repr=False, default=None)  # (S, A), zero off the mask


def estimate_expert_advantages(
    sampler: MdpSampler,
    weights: np.ndarray,
    experts: np.ndarray,
    config: EstimationConfig,
    t: int,
    root_seed: int,
    current_state: int | None = None,
) -> AdvantageEstimate:
    """Masked (or lazy) estimate of the expert advantages under ``weights``.

    Masked mode draws ``Z_s ~ Ber(kappa)`` for every state and, where
    ``Z_s = 1``, one truncated rollout per admissible action, shared by all
    experts, scaled by ``1 / kappa``.  Lazy mode estimates only the row of
    ``current_state``, unscaled.
    """
    mdp = sampler.mdp
    S, A = mdp.num_states, mdp.num_actions
    experts = np.asarray(experts, dtype=float)
    K = experts.shape[0]
    if config.mode == MASKED:
        Z = stream(root_seed, t, PURPOSE_MASK).random(S) < config.kappa
        scale = 1.0 / config.kappa
    else:
        if current_state is None:
            raise ValueError("lazy mode needs the current trajectory state")
        Z = np.zeros(S, dtype=bool)
        Z[current_state] = True
        scale = 1.0
    pi = mix_policy(weights, experts)
    rng = stream(root_seed, t, PURPOSE_ROLLOUT)
    atilde, Qt = _advantage_rows(sampler, pi, experts, np.flatnonzero(Z), scale, config, rng)
    full = np.zeros((S, K))
    full[Z] = atilde
    Q_full = np.zeros((S, A))
    Q_full[Z] = Qt
    return AdvantageEstimate(full, Z, Q_full)


def _advantage_rows(sampler, pi, experts, rows, scale, config, rng):
    """Estimated advantage rows for the states ``rows`` (repeats allowed).

    One rollout batch per admissible ``(row, action)`` pair, drawn in row-major
    order; returns ``(atilde, q_tilde)`` of shapes ``(n, K)`` and ``(n, A)``.
    """
    mdp = sampler.mdp
    n = rows.size
    adm = mdp.admissible[rows]
    idx, aa = np.nonzero(adm)
    reps = config.repeats
    returns = rollout_returns(
        sampler, pi, np.repeat(rows[idx], reps), np.repeat(aa, reps), config.horizon, rng
    )
    Qt = np.zeros((n, mdp.num_actions))
    Qt[idx, aa] = returns.reshape(-1, reps).mean(axis=1)
    pr = pi[rows]
    baseline = (pr * Qt).sum(axis=1, keepdims=True)
    adv = np.where(adm, Qt - baseline, 0.0)
    atilde = scale * np.einsum("kna,na->nk", experts[:, rows, :], adv)
    return atilde, Qt


def sample_advantages(
    sampler: MdpSampler,
    weights: np.ndarray,
    experts: np.ndarray,
    config: EstimationConfig,
    states,
    samples: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Independent draws of the estimated rows at ``states``.

    Returns ``atilde`` of shape ``(samples, len(states), K)`` and the masks
    ``(samples, len(states))``.  In lazy mode every draw is unmasked and unscaled.
    """
    experts = np.asarray(experts, dtype=float)
    states = np.asarray(states, dtype=np.int64)
    K = experts.shape[0]
    pi = mix_policy(weights, experts)
    if config.mode == MASKED:
        Z = rng.random((samples, states.size)) < config.kappa
        scale = 1.0 / config.kappa
    else:
        Z = np.ones((samples, states.size), dtype=bool)
        scale = 1.0
    out = np.zeros((samples, states.size, K))
    flat_rows = np.broadcast_to(states, (samples, states.size))[Z]
    atilde, _ = _advantage_rows(sampler, pi, experts, flat_rows, scale, config, rng)
    out[Z] = atilde
    return out, Z


def estimate_bound(mdp: TabularMdp, config: EstimationConfig) -> float:
    """Almost-sure bound on ``|atilde|``: ``reward_max / (kappa (1 - gamma))``."""
    kappa = config.kappa if config.mode == MASKED else 1.0
    return mdp.reward_max / (kappa * (1.0 - mdp.discount))


@dataclass
class EstimatedRunRecord(OracleRunRecord):
    states: np.ndarray = field(default=None, repr=False)  # live trajectory s_0..s_{T-1}
    gain_bound: float = 0.0
    root_seed: int = 0

    def decrease_frequency(self, tol: float = 1e-8) -> float:
        return self.decreases(tol) / self.T


def run_estimated_loop(
    mdp: TabularMdp,
    experts,
    kind: str,
    params: dict | None,
    T: int,
    config: EstimationConfig,
    mu0,
    root_seed: int,
    gain_bound: float | None = None,
    targets: tuple[float, float] | None = None,
    record_weights: bool = False,
    sampler: MdpSampler | None = None,
) -> EstimatedRunRecord:
    """Estimated-advantage orchestration with exact value reporting.

    Round ``t = 0, ..., T-1`` feeds the per-state learners the estimate built
    under ``q_t`` and advances one live trajectory by a step of ``q_t Pi``
    (the trajectory does not influence the weights in masked mode).  The
    exact ``V_{q_t Pi}(mu0)`` is recorded for every ``t``.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    kind = resolve_kind(kind)
    params = dict(params or {})
    experts = check_experts(mdp, experts)
    mu0 = check_distribution(mu0, mdp.num_states)
    config.check(mdp.discount)
    sampler = sampler or MdpSampler(mdp)
    K, S, _ = experts.shape
    if gain_bound is None:
        gain_bound = estimate_bound(mdp, config)
    learner = Learner(kind, K, gain_bound, batch=S, **params)
    if targets is None:
        target = value_at(optimal_orchestration(mdp, experts).values, mu0)
        optimal = value_at(value_iteration(mdp)[0], mu0)
    else:
        target, optimal = targets

    init = stream(root_seed, 0, PURPOSE_INIT)
    state = int(init.choice(S, p=mu0))
    values = np.empty(T + 1)
    states = np.empty(T, dtype=np.int64)
    history = []
    V = None
    for t in range(T + 1):
        q = learner.weights
        if record_weights:
            history.append(q.copy())
        pi = mix_policy(q, experts)
        V = policy_evaluation(mdp, pi, v0=V, method="iterative")
        values[t] = value_at(V, mu0)
        if t == T:
            break
        states[t] = state
        est = estimate_expert_advantages(sampler, q, experts, config, t, root_seed, current_state=state)
        learner.observe(np.clip(est.atilde, -gain_bound, gain_bound))
        rng = stream(root_seed, t, PURPOSE_TRAJECTORY)
        s_arr = np.array([state])
        a = sampler.actions(policy_cumsum(pi), s_arr, rng)
        state = int(sampler.next_states(s_arr, a, rng)[0])
    return EstimatedRunRecord(
        kind, params, values[1:], target, optimal, float(values[0]), history,
        states=states, gain_bound=float(gain_bound), root_seed=int(root_seed),
    )

