"""Discrete-time stochastic dynamic matching as a tabular MDP.

Items of ``I`` classes arrive one per round.  The incoming item is matched
with a queued compatible item, queued itself, or trashed when its queue is
full.

Encoding (all indices 0-based):

* state ``(rho, i)`` has index ``i * B**I + sum_j rho_j * B**j`` with ``B = L + 1``
* action ``j < I`` matches the incoming item with one queued item of class j;
  action ``I`` enqueues it and action ``I + 1`` trashes it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mdp import TabularMdp

EXPERT_KINDS = ("match_longest", "max_payoff", "uniform_random", "permutation_priority")
MATCH_SEMANTICS = ("remove", "literal")
DEFAULT_STATE_CAP = 200_000


class StateSpaceTooLarge(ValueError):
    def __init__(self, required: int, cap: int):
        super().__init__(f"matching MDP needs {required} states, above the cap of {cap}")
        self.required = required
        self.cap = cap


@dataclass
class MatchingConfig:
    """Parameters of a matching scenario.

    ``edges`` maps unordered 0-based class pairs ``(j, j')`` to payoffs.
    ``forced_match``: enqueue/trash only when no match is available.
    ``match_semantics``: ``"remove"`` takes the matched item out of its
    queue; ``"literal"`` adds one to it instead (capped at L).
    """

    num_classes: int
    max_queue: int
    holding_coeff: float
    discount: float
    arrival_probs: np.ndarray
    edges: dict
    sigma: np.ndarray | None = None
    seed: int = 0
    forced_match: bool = True
    match_semantics: str = "remove"
    payoff: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        I = self.num_classes
        if I < 1 or self.max_queue < 1:
            raise ValueError("need at least one class and a positive queue length")
        lam = np.asarray(self.arrival_probs, dtype=float)
        if lam.shape != (I,) or lam.min() < 0 or abs(lam.sum() - 1.0) > 1e-9:
            raise ValueError("arrival_probs must be a probability vector over the classes")
        self.arrival_probs = lam
        if self.holding_coeff < 0:
            raise ValueError("holding_coeff must be nonnegative")
        if not 0 < self.discount < 1:
            raise ValueError("discount must lie in (0, 1)")
        if self.match_semantics not in MATCH_SEMANTICS:
            raise ValueError(f"match_semantics must be one of {MATCH_SEMANTICS}")
        G = np.zeros((I, I))
        adj = np.zeros((I, I), dtype=bool)
        for (a, b), g in self.edges.items():
            if a == b:
                raise ValueError("compatibility graph has a self-loop")
            if not (0 <= a < I and 0 <= b < I):
                raise ValueError(f"edge {(a, b)} refers to an unknown class")
            if not (math.isfinite(g) and g >= 0):
                raise ValueError("payoffs must be finite and nonnegative")
            G[a, b] = G[b, a] = g
            adj[a, b] = adj[b, a] = True
        self.payoff = G
        self.adjacency = adj
        if self.sigma is None:
            self.sigma = np.random.default_rng(self.seed).permutation(I)
        self.sigma = np.asarray(self.sigma, dtype=int)
        if sorted(self.sigma.tolist()) != list(range(I)):
            raise ValueError("sigma must be a permutation of the classes")

    @property
    def num_states(self) -> int:
        return self.num_classes * (self.max_queue + 1) ** self.num_classes

    @property
    def num_actions(self) -> int:
        return self.num_classes + 2

    @property
    def enqueue(self) -> int:
        return self.num_classes

    @property
    def trash(self) -> int:
        return self.num_classes + 1

    @property
    def reward_max(self) -> float:
        return self.holding_coeff * self.max_queue * self.num_classes + float(self.payoff.max(initial=0.0))


@dataclass(frozen=True)
class StateCodec:
    num_classes: int
    max_queue: int

    @property
    def base(self) -> int:
        return self.max_queue + 1

    def encode(self, rho, i: int) -> int:
        B = self.base
        return int(i) * B ** self.num_classes + sum(int(r) * B**j for j, r in enumerate(rho))

    def decode(self, s: int) -> tuple[tuple[int, ...], int]:
        B = self.base
        i, rest = divmod(int(s), B ** self.num_classes)
        rho = tuple((rest // B**j) % B for j in range(self.num_classes))
        return rho, i

    def decode_all(self) -> tuple[np.ndarray, np.ndarray]:
        """Queue lengths ``(S, I)`` and incoming classes ``(S,)`` of every state."""
        I, B = self.num_classes, self.base
        s = np.arange(I * B**I)
        incoming = s // B**I
        rest = s % B**I
        rho = (rest[:, None] // B ** np.arange(I)[None, :]) % B
        return rho, incoming


@dataclass
class MatchingModel:
    config: MatchingConfig
    mdp: TabularMdp
    mu0: np.ndarray
    codec: StateCodec
    queues: np.ndarray  # (S, I)
    incoming: np.ndarray  # (S,)
    matchable: np.ndarray  # (S, I) prospective matches M(s)


def build_matching_mdp(cfg: MatchingConfig, max_states: int = DEFAULT_STATE_CAP) -> MatchingModel:
    I, L = cfg.num_classes, cfg.max_queue
    S = cfg.num_states
    if S > max_states:
        raise StateSpaceTooLarge(S, max_states)
    A = cfg.num_actions
    codec = StateCodec(I, L)
    B = codec.base
    rho, inc = codec.decode_all()
    weights = B ** np.arange(I)
    code = rho @ weights

    matchable = cfg.adjacency[inc] & (rho >= 1)
    any_match = matchable.any(axis=1)
    own = rho[np.arange(S), inc]

    admissible = np.zeros((S, A), dtype=bool)
    admissible[:, :I] = matchable
    enq_ok = own <= L - 1
    trash_ok = own == L
    if cfg.forced_match:
        enq_ok &= ~any_match
        trash_ok &= ~any_match
    admissible[:, cfg.enqueue] = enq_ok
    admissible[:, cfg.trash] = trash_ok

    next_code = np.zeros((S, A), dtype=np.int64)
    step = 1 if cfg.match_semantics == "literal" else -1
    for j in range(I):
        shifted = rho[:, j] + step
        delta = np.where(shifted > L, 0, step)
        next_code[:, j] = code + delta * weights[j]
    next_code[:, cfg.enqueue] = code + weights[inc]
    next_code[:, cfg.trash] = code

    holding = cfg.holding_coeff * (L - rho).sum(axis=1)
    reward = np.repeat(holding[:, None], A, axis=1)
    reward[:, :I] += cfg.payoff[inc]
    reward = np.where(admissible, reward, 0.0)

    ss, aa = np.nonzero(admissible)
    n = ss.size
    rows = np.repeat(ss * A + aa, I)
    cols = (next_code[ss, aa][:, None] + np.arange(I)[None, :] * B**I).ravel()
    vals = np.tile(cfg.arrival_probs, n)
    keep = vals > 0
    P = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(S * A, S))
    mdp = TabularMdp(P, reward, cfg.discount, cfg.reward_max, admissible)

    mu0 = np.zeros(S)
    mu0[np.arange(I) * B**I] = cfg.arrival_probs
    return MatchingModel(cfg, mdp, mu0, codec, rho, inc, matchable)


def expert_policy(model: MatchingModel, kind: str) -> np.ndarray:
    """Tabular expert policy over every state of ``model``.

    Ties: ``match_longest`` prefers larger payoff then lower class index;
    ``max_payoff`` prefers the longer queue then lower class index.
    """
    cfg = model.config
    I = cfg.num_classes
    S, A = model.mdp.num_states, model.mdp.num_actions
    M = model.matchable
    rho, inc = model.queues, model.incoming
    g = cfg.payoff[inc]  # (S, I)
    pi = np.zeros((S, A))
    has = M.any(axis=1)

    if kind == "uniform_random":
        counts = M.sum(axis=1, keepdims=True)
        pi[:, :I] = np.where(M, 1.0 / np.maximum(counts, 1), 0.0)
    else:
        # lexicographic keys; argmax then picks the lowest remaining class
        if kind == "match_longest":
            keys = (rho, g)
        elif kind == "max_payoff":
            keys = (g, rho)
        elif kind == "permutation_priority":
            keys = (np.broadcast_to(cfg.sigma[None, :], (S, I)),)
        else:
            raise ValueError(f"unknown expert kind {kind!r}")
        cand = M.copy()
        for key in keys:
            best = np.where(cand, key, -np.inf).max(axis=1, keepdims=True)
            cand &= key >= best
        first = np.argmax(cand, axis=1)
        rows = np.flatnonzero(has)
        pi[rows, first[rows]] = 1.0
    own = rho[np.arange(S), inc]
    idle = np.flatnonzero(~has)
    pi[idle, np.where(own[idle] < cfg.max_queue, cfg.enqueue, cfg.trash)] = 1.0
    return pi


def expert_set(model: MatchingModel, kinds=EXPERT_KINDS[:3]) -> np.ndarray:
    return np.stack([expert_policy(model, k) for k in kinds])


def scenario_one(**overrides) -> MatchingConfig:
    """Four classes, L = 5, c = 0.5, gamma = 0.8 with the reference graph."""
    edges = {(0, 1): 200.0, (0, 2): 30.0, (1, 2): 50.0, (1, 3): 10.0, (2, 3): 1.0}
    params = dict(
        num_classes=4,
        max_queue=5,
        holding_coeff=0.5,
        discount=0.8,
        arrival_probs=np.array([0.1, 0.41, 0.27, 0.22]),
        edges=edges,
    )
    params.update(overrides)
    return MatchingConfig(**params)


def random_scenario(
    seed: int,
    num_classes: int = 8,
    max_queue: int = 2,
    holding_coeff: float = 5.0,
    discount: float = 0.8,
    payoff_high: float = 20.0,
    edge_prob: float = 0.5,
) -> MatchingConfig:
    """Random graph, payoffs ``U[0, payoff_high]`` and normalised ``U[0, 1]`` arrivals.

    The graph is a random spanning tree plus independent extra edges, so that
    every class has at least one partner.
    """
    rng = np.random.default_rng(seed)
    I = num_classes
    order = rng.permutation(I)
    pairs = set()
    for n in range(1, I):
        a, b = order[n], order[rng.integers(n)]
        pairs.add((min(a, b), max(a, b)))
    for a in range(I):
        for b in range(a + 1, I):
            if rng.random() < edge_prob:
                pairs.add((a, b))
    edges = {(int(a), int(b)): float(rng.uniform(0.0, payoff_high)) for a, b in sorted(pairs)}
    lam = rng.uniform(0.0, 1.0, size=I)
    lam /= lam.sum()
    return MatchingConfig(
        num_classes=I,
        max_queue=max_queue,
        holding_coeff=holding_coeff,
        discount=discount,
        arrival_probs=lam,
        edges=edges,
        seed=seed,
    )
