"""Full-information adversarial learners over K experts.

A :class:`Learner` holds a *batch* of independent learners that share a
strategy, a gain bound and a round counter: ``weights`` has shape
``(batch, K)`` and :meth:`Learner.observe` takes gains of the same shape.
Orchestration uses one batch row per MDP state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

POLY = "poly_potential"
EXP_FIXED = "exp_fixed"
EXP_TV = "exp_timevarying"
GREEDY = "greedy_projection"
KINDS = (POLY, EXP_FIXED, EXP_TV, GREEDY)
MONOTONE_KINDS = (POLY, EXP_FIXED, GREEDY)

ALIASES = {
    "poly": POLY,
    "exp-fixed": EXP_FIXED,
    "exp-tv": EXP_TV,
    "greedy": GREEDY,
}


def resolve_kind(kind: str) -> str:
    kind = ALIASES.get(kind, kind)
    if kind not in KINDS:
        raise ValueError(f"unknown strategy {kind!r}")
    return kind


def default_poly_exponent(K: int) -> float:
    return float(max(2, round(2 * math.log(K))))


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of ``v`` onto the probability simplex.

    Sort-and-threshold: ``w = max(v - theta, 0)`` with ``theta`` chosen so that
    the row sums to one.
    """
    v = np.asarray(v, dtype=float)
    flat = v.reshape(-1, v.shape[-1])
    K = flat.shape[1]
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    idx = np.arange(1, K + 1)
    cond = u - css / idx > 0
    rho = K - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(flat.shape[0]), rho] / (rho + 1)
    w = np.maximum(flat - theta[:, None], 0.0)
    return w.reshape(v.shape)


def _normalise_exp(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=1, keepdims=True))
    return z / z.sum(axis=1, keepdims=True)


def _normalise_poly(R: np.ndarray, p: float) -> np.ndarray:
    pos = np.maximum(R, 0.0)
    top = pos.max(axis=1, keepdims=True)
    K = R.shape[1]
    out = np.full_like(R, 1.0 / K)
    live = top[:, 0] > 0
    if live.any():
        v = (pos[live] / top[live]) ** p
        out[live] = v / v.sum(axis=1, keepdims=True)
    return out


@dataclass
class Learner:
    """Batch of adversarial learners.

    Parameters
    ----------
    kind : one of ``KINDS``.
    K : number of experts.
    gain_bound : the range ``M`` of the gains, ``|g| <= M``.
    p : polynomial exponent (poly only).
    eta : constant learning rate (exp_fixed only).
    eta_scale : constant ``c`` of a ``c / sqrt(t)`` schedule (exp_tv, greedy).
        Defaults to ``sqrt(ln K) / M`` and ``sqrt(2 / K) / M`` respectively.
    """

    kind: str
    K: int
    gain_bound: float
    batch: int = 1
    p: float | None = None
    eta: float | None = None
    eta_scale: float | None = None
    check_bound: bool = True
    round: int = 1
    weights: np.ndarray = field(default=None, repr=False)
    regret_terms: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.kind = resolve_kind(self.kind)
        if self.K < 2:
            raise ValueError("need at least two experts")
        if not self.gain_bound > 0:
            raise ValueError("gain_bound must be positive")
        if self.kind == POLY:
            if self.p is None:
                self.p = default_poly_exponent(self.K)
            if not self.p > 1:
                raise ValueError("polynomial exponent must exceed 1")
        elif self.kind == EXP_FIXED:
            if self.eta is None or not self.eta > 0:
                raise ValueError("exp_fixed needs a positive eta")
        elif self.eta_scale is None:
            if self.kind == EXP_TV:
                self.eta_scale = math.sqrt(math.log(self.K)) / self.gain_bound
            else:
                self.eta_scale = math.sqrt(2.0 / self.K) / self.gain_bound
        elif not self.eta_scale > 0:
            raise ValueError("eta_scale must be positive")
        if self.weights is None:
            self.weights = np.full((self.batch, self.K), 1.0 / self.K)
        if self.regret_terms is None:
            self.regret_terms = np.zeros((self.batch, self.K))

    def rate(self, t: int | None = None) -> float:
        """Learning rate in force at round ``t`` (defaults to the current one)."""
        t = self.round if t is None else t
        if self.kind == EXP_FIXED:
            return self.eta
        if self.kind in (EXP_TV, GREEDY):
            return self.eta_scale / math.sqrt(t)
        return float("nan")

    def copy(self) -> "Learner":
        other = Learner(
            self.kind, self.K, self.gain_bound, self.batch, self.p, self.eta,
            self.eta_scale, self.check_bound, self.round,
            self.weights.copy(), self.regret_terms.copy(),
        )
        return other

    def observe(self, gains: np.ndarray) -> np.ndarray:
        """Feed the round-t gains (shape ``(batch, K)``); returns new weights."""
        g = np.asarray(gains, dtype=float).reshape(self.batch, self.K)
        if self.check_bound and np.abs(g).max(initial=0.0) > self.gain_bound + 1e-9:
            raise ValueError("gain exceeds the declared gain bound")
        w = self.weights
        inst = g - (w * g).sum(axis=1, keepdims=True)
        self.regret_terms = self.regret_terms + inst
        t = self.round
        if self.kind == POLY:
            new = _normalise_poly(self.regret_terms, self.p)
        elif self.kind == EXP_FIXED:
            new = _normalise_exp(self.eta * self.regret_terms)
        elif self.kind == EXP_TV:
            new = _normalise_exp(self.rate(t + 1) * self.regret_terms)
        else:
            new = project_to_simplex(w + self.rate(t) * g)
        self.weights = new
        self.round = t + 1
        return new


def new_learner(kind: str, K: int, gain_bound: float, batch: int = 1, **params) -> Learner:
    return Learner(kind, K, gain_bound, batch=batch, **params)


def realized_regret(gains_history, weights_history) -> float:
    """``max_k sum_t g_{t,k} - sum_t <w_t, g_t>`` for one learner."""
    G = np.asarray(gains_history, dtype=float)
    W = np.asarray(weights_history, dtype=float)
    if G.shape != W.shape:
        raise ValueError("histories must have equal shapes")
    if G.size == 0:
        return 0.0
    return float(G.sum(axis=0).max() - (W * G).sum())


def regret_bound(kind: str, T: int, K: int, gain_bound: float = 1.0, p=None, eta=None, eta_scale=None) -> float:
    """Worst-case regret guarantee ``M * B_{T,K}`` of a strategy.

    For ``exp_fixed`` the rate acts on raw gains, so the guarantee reads
    ``ln K / eta + eta T M^2 / 2`` (which is ``M * B`` at the rescaled rate
    ``eta * M``); it does not vanish relative to T.
    """
    kind = resolve_kind(kind)
    if T < 1:
        raise ValueError("T must be at least 1")
    M = gain_bound
    if kind == POLY:
        return M * math.sqrt(6 * T * math.log(K))
    if kind == EXP_FIXED:
        if eta is None:
            raise ValueError("exp_fixed bound needs eta")
        return math.log(K) / eta + eta * T * M * M / 2
    if kind == EXP_TV:
        return M * math.sqrt(T * math.log(K))
    return 3 * M * math.sqrt(K * T)


def bound_is_sublinear(kind: str) -> bool:
    return resolve_kind(kind) != EXP_FIXED


def monotonicity_gap(w_before: np.ndarray, g: np.ndarray, w_after: np.ndarray) -> np.ndarray:
    """``sum_k w_{t+1,k} (g_k - <w_t, g>)`` row-wise."""
    w_before = np.atleast_2d(w_before)
    g = np.atleast_2d(g)
    w_after = np.atleast_2d(w_after)
    inst = g - (w_before * g).sum(axis=1, keepdims=True)
    gap = (w_after * inst).sum(axis=1)
    return gap if gap.size > 1 else float(gap[0])
