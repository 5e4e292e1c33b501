import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_force_projection, exhaustive_regret
from polorch.adversarial import (
    EXP_FIXED,
    EXP_TV,
    GREEDY,
    KINDS,
    MONOTONE_KINDS,
    POLY,
    Learner,
    bound_is_sublinear,
    default_poly_exponent,
    monotonicity_gap,
    project_to_simplex,
    realized_regret,
    regret_bound,
    resolve_kind,
)


def make(kind, K=3, M=1.0, batch=1, **kw):
    if kind == EXP_FIXED and "eta" not in kw:
        kw["eta"] = 0.3
    return Learner(kind, K, M, batch=batch, **kw)


class TestConstruction:
    def test_aliases(self):
        assert resolve_kind("exp-tv") == EXP_TV
        assert resolve_kind("poly") == POLY
        with pytest.raises(ValueError):
            resolve_kind("hedge")

    def test_needs_two_experts(self):
        with pytest.raises(ValueError):
            Learner(POLY, 1, 1.0)

    def test_exp_fixed_needs_eta(self):
        with pytest.raises(ValueError):
            Learner(EXP_FIXED, 3, 1.0)

    def test_default_rates(self):
        assert make(EXP_TV, K=4, M=2.0).rate(1) == pytest.approx(math.sqrt(math.log(4)) / 2.0)
        assert make(GREEDY, K=4, M=2.0).rate(4) == pytest.approx(math.sqrt(2 / 4) / 2.0 / 2.0)
        assert default_poly_exponent(3) == 2.0
        assert default_poly_exponent(20) == 6.0

    def test_gain_bound_enforced(self):
        with pytest.raises(ValueError, match="gain bound"):
            make(POLY).observe(np.array([[2.0, 0.0, 0.0]]))


class TestUpdates:
    @pytest.mark.parametrize("kind", KINDS)
    def test_starts_uniform_and_stays_on_simplex(self, kind):
        rng = np.random.default_rng(0)
        learner = make(kind, K=4, batch=3)
        np.testing.assert_allclose(learner.weights, 0.25)
        for _ in range(50):
            w = learner.observe(rng.uniform(-1, 1, size=(3, 4)))
            assert w.min() >= 0
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)

    def test_poly_weights_follow_positive_regret(self):
        learner = make(POLY, p=2)
        learner.observe(np.array([[1.0, 0.0, -1.0]]))
        # instantaneous regrets are (1, 0, -1); only expert 0 is positive
        np.testing.assert_allclose(learner.weights, [[1.0, 0.0, 0.0]])

    def test_poly_uniform_without_positive_regret(self):
        learner = make(POLY)
        learner.observe(np.zeros((1, 3)))
        np.testing.assert_allclose(learner.weights, 1 / 3)

    def test_exp_fixed_closed_form(self):
        eta = 0.7
        learner = make(EXP_FIXED, eta=eta)
        g = np.array([[0.5, -0.2, 0.1]])
        learner.observe(g)
        r = g[0] - g[0].mean()
        expect = np.exp(eta * r) / np.exp(eta * r).sum()
        np.testing.assert_allclose(learner.weights[0], expect, atol=1e-15)

    def test_exp_tv_uses_next_rate(self):
        learner = make(EXP_TV, eta_scale=1.0)
        g = np.array([[1.0, 0.0, 0.0]])
        learner.observe(g)
        r = g[0] - g[0].mean()
        eta2 = 1.0 / math.sqrt(2)
        np.testing.assert_allclose(learner.weights[0], np.exp(eta2 * r) / np.exp(eta2 * r).sum())

    def test_greedy_is_projected_step(self):
        learner = make(GREEDY, eta_scale=0.5)
        g = np.array([[1.0, 0.2, -1.0]])
        learner.observe(g)
        np.testing.assert_allclose(learner.weights[0], brute_force_projection(1 / 3 + 0.5 * g[0]), atol=1e-12)

    def test_large_regrets_do_not_overflow(self):
        learner = make(EXP_FIXED, eta=50.0, M=1e3)
        learner.observe(np.array([[1e3, -1e3, 0.0]]))
        assert np.isfinite(learner.weights).all()

    def test_copy_is_independent(self):
        a = make(POLY)
        b = a.copy()
        a.observe(np.array([[1.0, 0.0, 0.0]]))
        np.testing.assert_allclose(b.weights, 1 / 3)
        assert b.round == 1 and a.round == 2


class TestProjection:
    @pytest.mark.parametrize("seed", range(20))
    def test_matches_support_enumeration(self, seed):
        v = np.random.default_rng(seed).normal(scale=2, size=5)
        np.testing.assert_allclose(project_to_simplex(v), brute_force_projection(v), atol=1e-12)

    def test_fixed_point_on_simplex(self):
        w = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(project_to_simplex(w), w, atol=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(1, 9), elements=st.floats(-1e3, 1e3)))
    def test_kkt(self, v):
        w = project_to_simplex(v)
        assert w.min() >= 0
        assert abs(w.sum() - 1) <= 1e-10 * max(1.0, np.abs(v).max())
        support = w > 0
        theta = np.mean(v[support] - w[support])
        scale = max(1.0, np.abs(v).max())
        assert np.abs(v[support] - w[support] - theta).max() <= 1e-10 * scale
        if (~support).any():
            assert (v[~support] - theta).max() <= 1e-10 * scale


class TestRegret:
    def test_constant_gains_give_zero_regret(self):
        G = np.full((10, 3), 0.4)
        W = np.full((10, 3), 1 / 3)
        assert realized_regret(G, W) == pytest.approx(0.0, abs=1e-12)

    def test_matches_explicit_loops(self):
        rng = np.random.default_rng(1)
        G = rng.uniform(-1, 1, size=(30, 4))
        W = rng.dirichlet(np.ones(4), size=30)
        assert realized_regret(G, W) == pytest.approx(exhaustive_regret(G, W), abs=1e-12)

    def test_bound_formulas(self):
        assert regret_bound(POLY, 400, 3) == pytest.approx(math.sqrt(2400 * math.log(3)))
        assert regret_bound(EXP_TV, 100, 4, 2.0) == pytest.approx(2 * math.sqrt(100 * math.log(4)))
        assert regret_bound(GREEDY, 100, 4, 2.0) == pytest.approx(6 * math.sqrt(400))
        assert regret_bound(EXP_FIXED, 100, 4, 1.0, eta=0.1) == pytest.approx(math.log(4) / 0.1 + 5)
        assert not bound_is_sublinear(EXP_FIXED)
        assert all(bound_is_sublinear(k) for k in (POLY, EXP_TV, GREEDY))

    @pytest.mark.parametrize("kind", [POLY, GREEDY])
    def test_uniform_gains_within_bound(self, kind):
        rng = np.random.default_rng(3)
        learner = make(kind, K=3)
        G, W = [], []
        for _ in range(400):
            W.append(learner.weights[0].copy())
            G.append(rng.uniform(-1, 1, 3))
            learner.observe(G[-1][None])
        assert realized_regret(G, W) <= regret_bound(kind, 400, 3)


class TestMonotonicity:
    @pytest.mark.parametrize("kind", MONOTONE_KINDS)
    def test_gap_nonnegative_along_random_runs(self, kind):
        rng = np.random.default_rng(5)
        learner = make(kind, K=5, batch=50, M=2.0)
        for _ in range(40):
            before = learner.weights.copy()
            g = rng.uniform(-2, 2, size=(50, 5))
            after = learner.observe(g)
            assert monotonicity_gap(before, g, after).min() >= -1e-10

    def test_scalar_output_for_single_row(self):
        assert isinstance(monotonicity_gap(np.full(3, 1 / 3), np.ones(3), np.full(3, 1 / 3)), float)


@settings(max_examples=60, deadline=None)
@given(
    kind=st.sampled_from(KINDS),
    K=st.integers(2, 6),
    T=st.integers(1, 60),
    seed=st.integers(0, 2**31 - 1),
)
def test_weights_valid_for_arbitrary_bounded_gains(kind, K, T, seed):
    rng = np.random.default_rng(seed)
    learner = make(kind, K=K, M=3.0)
    for _ in range(T):
        w = learner.observe(rng.uniform(-3, 3, size=(1, K)))
        assert w.min() >= 0 and abs(w.sum() - 1) <= 1e-12
