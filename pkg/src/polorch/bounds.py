"""Guarantees on the value regret of orchestration loops.

All bounds are stated for rewards in ``[0, 1]`` and scale linearly with
``reward_max``.  ``B`` is the unit-range regret bound of the strategy, see
:func:`polorch.adversarial.regret_bound`.
"""
from __future__ import annotations

import math

from .adversarial import regret_bound


def unit_regret_bound(kind: str, T: int, K: int, **params) -> float:
    return regret_bound(kind, T, K, 1.0, **params)


def oracle_cesaro_bound(kind: str, T: int, K: int, gamma: float, reward_max: float = 1.0, **params) -> float:
    """``B / ((1 - gamma)^2 T)`` on the Cesàro value regret of the oracle loop."""
    B = unit_regret_bound(kind, T, K, **params)
    return reward_max * B / ((1.0 - gamma) ** 2 * T)


def exp_fixed_last_iterate_bound(T: int, K: int, gamma: float, eta: float, reward_max: float = 1.0) -> float:
    """``ln K / (eta (1 - gamma) T) + 1 / ((1 - gamma)^2 T)`` on the last-iterate regret.

    ``eta`` acts on unit-range cumulative advantages.
    """
    return reward_max * (math.log(K) / (eta * (1.0 - gamma) * T) + 1.0 / ((1.0 - gamma) ** 2 * T))


def estimated_expected_bound(
    kind: str, T: int, K: int, gamma: float, epsilon: float, kappa: float, reward_max: float = 1.0, **params
) -> float:
    """``eps / (1 - gamma) + B / (kappa (1 - gamma)^2 T)`` on the expected Cesàro regret."""
    B = unit_regret_bound(kind, T, K, **params)
    return reward_max * (epsilon / (1.0 - gamma) + B / (kappa * (1.0 - gamma) ** 2 * T))


def estimated_high_probability_bound(
    kind: str, T: int, K: int, gamma: float, epsilon: float, kappa: float, delta: float,
    reward_max: float = 1.0, **params,
) -> float:
    """Expected-regret bound plus ``2 ln(1/delta) / (kappa (1 - gamma)^2 sqrt(T))``."""
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    base = estimated_expected_bound(kind, T, K, gamma, epsilon, kappa, reward_max, **params)
    return base + reward_max * 2.0 * math.log(1.0 / delta) / (kappa * (1.0 - gamma) ** 2 * math.sqrt(T))
