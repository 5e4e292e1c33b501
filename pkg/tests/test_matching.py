import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polorch.matching import (
    EXPERT_KINDS,
    MatchingConfig,
    StateCodec,
    StateSpaceTooLarge,
    build_matching_mdp,
    expert_policy,
    expert_set,
    random_scenario,
    scenario_one,
)


def small_config(**kw):
    params = dict(
        num_classes=3,
        max_queue=2,
        holding_coeff=0.5,
        discount=0.7,
        arrival_probs=np.array([0.2, 0.5, 0.3]),
        edges={(0, 1): 4.0, (1, 2): 2.0},
    )
    params.update(kw)
    return MatchingConfig(**params)


@pytest.fixture(scope="module")
def scen1():
    return build_matching_mdp(scenario_one())


def reference_kernel(cfg):
    """Transition rows and rewards from a per-state loop over the model rules."""
    I, L = cfg.num_classes, cfg.max_queue
    codec = StateCodec(I, L)
    out = {}
    for rho in itertools.product(range(L + 1), repeat=I):
        for i in range(I):
            s = codec.encode(rho, i)
            matches = [j for j in range(I) if cfg.adjacency[i, j] and rho[j] >= 1]
            actions = list(matches)
            if not matches or not cfg.forced_match:
                actions.append(I if rho[i] < L else I + 1)
            hold = cfg.holding_coeff * sum(L - r for r in rho)
            for a in actions:
                nxt = list(rho)
                if a < I:
                    nxt[a] -= 1
                    reward = hold + cfg.payoff[i, a]
                elif a == I:
                    nxt[i] += 1
                    reward = hold
                else:
                    reward = hold
                row = np.zeros(codec.base**I * I)
                for i2, p in enumerate(cfg.arrival_probs):
                    row[codec.encode(nxt, i2)] += p
                out[s, a] = (row, reward)
    return out


class TestConfig:
    def test_reward_range_of_first_scenario(self):
        cfg = scenario_one()
        assert cfg.reward_max == pytest.approx(210.0)
        assert cfg.num_states == 5184

    @pytest.mark.parametrize(
        "kw",
        [
            {"arrival_probs": np.array([0.5, 0.5, 0.5])},
            {"edges": {(1, 1): 1.0}},
            {"edges": {(0, 1): -1.0}},
            {"edges": {(0, 5): 1.0}},
            {"edges": {(0, 1): float("inf")}},
            {"match_semantics": "other"},
            {"sigma": np.array([0, 0, 1])},
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            small_config(**kw)

    def test_state_cap(self):
        with pytest.raises(StateSpaceTooLarge) as info:
            build_matching_mdp(scenario_one(), max_states=1000)
        assert info.value.required == 5184


class TestCodec:
    def test_bijection(self):
        codec = StateCodec(3, 2)
        seen = set()
        for rho in itertools.product(range(3), repeat=3):
            for i in range(3):
                s = codec.encode(rho, i)
                assert codec.decode(s) == (rho, i)
                seen.add(s)
        assert seen == set(range(81))

    def test_documented_layout(self):
        codec = StateCodec(4, 5)
        assert codec.encode((1, 0, 2, 0), 3) == 3 * 6**4 + 1 + 2 * 36

    def test_vectorised_decode(self):
        codec = StateCodec(3, 2)
        rho, inc = codec.decode_all()
        for s in range(81):
            assert (tuple(rho[s]), inc[s]) == codec.decode(s)


class TestKernel:
    @pytest.mark.parametrize("forced", [True, False])
    def test_matches_reference_loop(self, forced):
        cfg = small_config(forced_match=forced)
        model = build_matching_mdp(cfg)
        P = model.mdp.transition.toarray()
        ref = reference_kernel(cfg)
        A = cfg.num_actions
        assert set(zip(*np.nonzero(model.mdp.admissible))) == set(ref)
        for (s, a), (row, reward) in ref.items():
            np.testing.assert_allclose(P[s * A + a], row, atol=1e-15)
            assert model.mdp.reward[s, a] == pytest.approx(reward)

    def test_rows_sum_to_one_and_rewards_bounded(self, scen1):
        mdp = scen1.mdp
        sums = np.asarray(mdp.transition.sum(axis=1)).reshape(mdp.num_states, -1)
        assert np.all(sums[mdp.admissible] == pytest.approx(1.0, abs=1e-15))
        assert mdp.reward.min() >= 0 and mdp.reward.max() <= mdp.reward_max

    def test_only_enqueue_without_partner(self, scen1):
        s = scen1.codec.encode((0, 0, 0, 0), 1)
        assert np.flatnonzero(scen1.mdp.admissible[s]).tolist() == [4]

    def test_only_trash_when_full(self, scen1):
        # class 4 (index 3) has partners 2 and 3 (indices 1, 2), both empty
        s = scen1.codec.encode((3, 0, 0, 5), 3)
        assert np.flatnonzero(scen1.mdp.admissible[s]).tolist() == [5]

    def test_every_state_has_exactly_one_fallback_without_matches(self, scen1):
        adm = scen1.mdp.admissible
        no_match = ~scen1.matchable.any(axis=1)
        assert np.all(adm[no_match, 4] ^ adm[no_match, 5])
        assert not adm[~no_match, 4:].any()

    def test_literal_semantics_grows_matched_queue(self):
        cfg = small_config(match_semantics="literal")
        model = build_matching_mdp(cfg)
        s = model.codec.encode((1, 0, 0), 1)
        row = model.mdp.transition[s * cfg.num_actions + 0].toarray().ravel()
        targets = {model.codec.decode(j)[0] for j in np.flatnonzero(row)}
        assert targets == {(2, 0, 0)}

    def test_initial_law_is_empty_queues(self, scen1):
        support = np.flatnonzero(scen1.mu0)
        assert [scen1.codec.decode(s)[0] for s in support] == [(0, 0, 0, 0)] * 4
        np.testing.assert_allclose(scen1.mu0[support], [0.1, 0.41, 0.27, 0.22])


class TestExperts:
    def test_max_payoff_example(self, scen1):
        s = scen1.codec.encode((1, 0, 1, 0), 1)
        assert set(np.flatnonzero(scen1.matchable[s])) == {0, 2}
        assert expert_policy(scen1, "max_payoff")[s].argmax() == 0

    def test_singleton_match_set(self, scen1):
        s = scen1.codec.encode((0, 0, 2, 0), 3)
        for kind in EXPERT_KINDS:
            pi = expert_policy(scen1, kind)
            assert pi[s, 2] == 1.0

    def test_match_longest_tie_on_payoff(self, scen1):
        # incoming class 3 (index 2): partners 1, 2, 4 with payoffs 30, 50, 1
        s = scen1.codec.encode((2, 2, 0, 2), 2)
        assert expert_policy(scen1, "match_longest")[s].argmax() == 1

    def test_max_payoff_tie_on_queue_length(self):
        cfg = small_config(edges={(0, 1): 3.0, (1, 2): 3.0})
        model = build_matching_mdp(cfg)
        s = model.codec.encode((1, 0, 2), 1)
        assert expert_policy(model, "max_payoff")[s].argmax() == 2
        s = model.codec.encode((2, 0, 2), 1)
        assert expert_policy(model, "max_payoff")[s].argmax() == 0

    def test_permutation_priority_follows_sigma(self):
        cfg = small_config(edges={(0, 1): 1.0, (1, 2): 9.0}, sigma=np.array([2, 0, 1]))
        model = build_matching_mdp(cfg)
        s = model.codec.encode((1, 0, 1), 1)
        assert expert_policy(model, "permutation_priority")[s].argmax() == 0

    def test_sigma_from_seed_is_stable(self):
        assert np.array_equal(small_config(seed=4).sigma, small_config(seed=4).sigma)

    def test_policies_are_valid(self, scen1):
        experts = expert_set(scen1, EXPERT_KINDS)
        adm = scen1.mdp.admissible
        for k, pi in enumerate(experts):
            np.testing.assert_allclose(pi.sum(axis=1), 1.0)
            assert not np.any(pi[~adm] > 0)
            if EXPERT_KINDS[k] != "uniform_random":
                assert set(np.unique(pi)) <= {0.0, 1.0}
        counts = scen1.matchable.sum(axis=1)
        rows = counts > 0
        np.testing.assert_allclose(experts[2][rows].max(axis=1), 1.0 / counts[rows])

    def test_unknown_kind(self, scen1):
        with pytest.raises(ValueError):
            expert_policy(scen1, "random_walk")


class TestGeneratedScenarios:
    @pytest.mark.parametrize("seed", range(5))
    def test_shape_and_ranges(self, seed):
        cfg = random_scenario(seed)
        assert cfg.num_classes == 8 and cfg.max_queue == 2 and cfg.holding_coeff == 5.0
        assert cfg.adjacency.any(axis=1).all()
        assert cfg.payoff.max() <= 20.0 and cfg.reward_max <= 100.0
        assert cfg.arrival_probs.sum() == pytest.approx(1.0)

    def test_deterministic_in_seed(self):
        a, b = random_scenario(3), random_scenario(3)
        assert a.edges == b.edges and np.array_equal(a.arrival_probs, b.arrival_probs)


@settings(max_examples=25, deadline=None)
@given(
    I=st.integers(1, 3),
    L=st.integers(1, 3),
    seed=st.integers(0, 10_000),
    forced=st.booleans(),
)
def test_random_models_are_valid_mdps(I, L, seed, forced):
    rng = np.random.default_rng(seed)
    edges = {(a, b): float(rng.uniform(0, 5)) for a in range(I) for b in range(a + 1, I) if rng.random() < 0.6}
    cfg = MatchingConfig(I, L, 0.3, 0.9, rng.dirichlet(np.ones(I)), edges, seed=seed, forced_match=forced)
    model = build_matching_mdp(cfg)  # TabularMdp validates rows, rewards and admissibility
    for kind in EXPERT_KINDS:
        pi = expert_policy(model, kind)
        assert np.allclose(pi.sum(axis=1), 1.0)
        assert not np.any(pi[~model.mdp.admissible] > 0)
