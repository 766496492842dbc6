import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mqlucb.env import (InitialStates, InvalidMdpError, MdpSpec, chain2, goal_mdp, make_hard_instance,
                        make_tabular_linear, max_total_reward, optimal_values, policy_value,
                        random_mdp, simulate_episode)


def brute_force_v1(mdp):
    """Best deterministic Markov policy by evaluating every one of them."""
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    flat = np.array(list(itertools.product(range(A), repeat=H * S)), dtype=np.int8)
    pols = flat.reshape(-1, H, S)
    s_idx = np.arange(S)
    V = np.zeros((len(pols), S))
    for h in range(H - 1, -1, -1):
        a = pols[:, h, :]
        V = mdp.reward[h, s_idx, a] + np.einsum("nst,nt->ns", mdp.transition[h, s_idx, a], V)
    return V.max(axis=0)


# --- optimal_values ---------------------------------------------------------

def test_chain2_optimal_values():
    v = optimal_values(chain2())
    assert v.V[0, 0] == 1.0
    assert v.V[1, 1] == 1.0
    assert v.V[1, 0] == 0.0
    assert np.all(v.V[2] == 0)


def test_zero_reward_gives_zero_values():
    m = random_mdp(3, 2, 4, np.random.default_rng(0))
    z = MdpSpec(m.transition, np.zeros_like(m.reward), m.initial)
    assert np.all(optimal_values(z).V == 0)


def test_optimal_matches_policy_enumeration():
    # all 3^(4*3) deterministic policies
    m = random_mdp(4, 3, 3, np.random.default_rng(11))
    np.testing.assert_allclose(optimal_values(m).V[0], brute_force_v1(m), atol=1e-10)


def test_bellman_residual_and_range():
    for seed in range(5):
        m = random_mdp(5, 3, 4, np.random.default_rng(seed))
        v = optimal_values(m)
        resid = v.Q - (m.reward + np.einsum("hsat,ht->hsa", m.transition, v.V[1:]))
        assert np.abs(resid).max() <= 1e-12
        np.testing.assert_array_equal(v.V[:-1], v.Q.max(axis=-1))
        assert v.V.min() >= 0 and v.V.max() <= 1 + 1e-12


# --- policy_value -----------------------------------------------------------

def test_chain2_always_a1():
    m = chain2()
    assert policy_value(m, np.ones((2, 2), dtype=int)).V[0, 0] == 0.0


def test_optimal_policy_fixed_point():
    m = random_mdp(4, 3, 3, np.random.default_rng(3))
    v = optimal_values(m)
    np.testing.assert_allclose(policy_value(m, v.Q.argmax(-1)).V, v.V, atol=1e-14)


def test_uniform_policy_chain2():
    assert policy_value(chain2(), np.full((2, 2, 2), 0.5)).V[0, 0] == pytest.approx(0.25, abs=1e-15)


# --- simulate_episode -------------------------------------------------------

def test_chain2_deterministic_episode():
    tr = simulate_episode(chain2(), np.zeros((2, 2), dtype=int), 1, np.random.default_rng(0))
    assert tr.total_reward == 1.0
    assert len(tr.steps) == 2
    assert tr.steps[0].next_state == tr.steps[1].state


def test_seeded_episode_reproducible():
    m = random_mdp(4, 3, 5, np.random.default_rng(1))
    pol = np.random.default_rng(2).integers(0, 3, size=(5, 4))
    a = simulate_episode(m, pol, 1, np.random.default_rng(42))
    b = simulate_episode(m, pol, 1, np.random.default_rng(42))
    assert a == b


def test_trajectory_invariants():
    m = random_mdp(4, 3, 5, np.random.default_rng(1))
    pol = np.random.default_rng(2).integers(0, 3, size=(5, 4))
    tr = simulate_episode(m, pol, 3, np.random.default_rng(0))
    assert tr.k == 3 and [s.h for s in tr.steps] == list(range(5))
    for a, b in zip(tr.steps, tr.steps[1:]):
        assert a.next_state == b.state
    for s in tr.steps:
        assert s.reward == m.reward[s.h, s.state, s.action]


def test_binomial_transition_frequency():
    P = np.zeros((1, 2, 1, 2))
    P[0, :, 0] = [0.7, 0.3]
    m = MdpSpec(P, np.zeros((1, 2, 1)), InitialStates())
    rng = np.random.default_rng(123)
    hits = sum(simulate_episode(m, np.zeros((1, 2), dtype=int), k, rng).steps[0].next_state == 1
               for k in range(1, 10_001))
    assert abs(hits / 10_000 - 0.3) <= 0.02


def test_missing_initial_state_signals():
    m = chain2().with_initial(InitialStates("list", states=(0, 0)))
    simulate_episode(m, np.zeros((2, 2), dtype=int), 2, np.random.default_rng(0))
    with pytest.raises(IndexError):
        simulate_episode(m, np.zeros((2, 2), dtype=int), 3, np.random.default_rng(0))


def test_categorical_initial_states():
    m = chain2().with_initial(InitialStates("categorical", probs=(0.0, 1.0)))
    tr = simulate_episode(m, np.zeros((2, 2), dtype=int), 1, np.random.default_rng(0))
    assert tr.steps[0].state == 1


# --- validation / serialization ---------------------------------------------

def test_rejects_bad_rows_and_rewards():
    m = chain2()
    P = np.array(m.transition)
    P[0, 0, 0] = [0.5, 0.6]
    with pytest.raises(InvalidMdpError):
        MdpSpec(P, m.reward, m.initial)
    r = np.array(m.reward)
    r[0, 0, 0] = 1.5
    with pytest.raises(InvalidMdpError):
        MdpSpec(m.transition, r, m.initial)


def test_rejects_total_reward_above_one():
    m = chain2()
    r = np.array(m.reward)
    r[0, 0, 0] = 0.5  # then r[1,1,0]=1 on the same path
    with pytest.raises(InvalidMdpError):
        MdpSpec(m.transition, r, m.initial)


def test_json_round_trip(tmp_path):
    m = random_mdp(3, 2, 3, np.random.default_rng(5), initial=InitialStates("list", states=(0, 2, 1)))
    m.save(tmp_path / "m.json")
    back = MdpSpec.load(tmp_path / "m.json")
    np.testing.assert_array_equal(back.transition, m.transition)
    np.testing.assert_array_equal(back.reward, m.reward)
    assert back.initial == m.initial
    assert m.to_dict()["schema"] == "mdp/v1"


@settings(max_examples=30, deadline=None)
@given(S=st.integers(1, 5), A=st.integers(1, 4), H=st.integers(1, 5), seed=st.integers(0, 10_000),
       conc=st.floats(0.05, 5.0))
def test_generated_mdps_satisfy_invariants(S, A, H, seed, conc):
    for gen in (random_mdp, goal_mdp):
        m = gen(S, A, H, np.random.default_rng(seed), concentration=conc)
        assert np.abs(m.transition.sum(-1) - 1).max() <= 1e-12
        assert max_total_reward(m.transition, m.reward).max() <= 1 + 1e-12
        assert m.reward.min() >= 0


def test_goal_mdp_rewards_only_last_stage():
    m = goal_mdp(4, 3, 3, np.random.default_rng(0))
    assert np.all(m.reward[:-1] == 0)
    assert set(np.unique(m.reward[-1])) <= {0.0, 1.0}
    assert m.reward[-1].any()


# --- hard instance ----------------------------------------------------------

def test_hard_instance_d4():
    hi = make_hard_instance(4, 2, 10, np.random.default_rng(0))
    assert hi.sub_count == 1 and hi.mdp.num_states == 2 and hi.mdp.num_actions == 2
    special = hi.special_policy(0)
    assert simulate_episode(hi.mdp, special, 1, np.random.default_rng(0)).total_reward == 1.0
    for flat in itertools.product(range(2), repeat=2):
        pol = special.copy()
        pol[:, 0] = flat
        if list(flat) != list(hi.special_actions[0]):
            assert simulate_episode(hi.mdp, pol, 1, np.random.default_rng(0)).total_reward == 0.0


def test_hard_instance_epochs():
    hi = make_hard_instance(8, 3, 800, np.random.default_rng(0))
    assert hi.epoch_starts == (1, 401)
    assert hi.epoch_of(1) == 0 and hi.epoch_of(400) == 0
    assert hi.epoch_of(401) == 1 and hi.epoch_of(800) == 1
    assert hi.mdp.initial.initial_state(400) == 0 and hi.mdp.initial.initial_state(401) == 2


def test_hard_instance_is_valid_and_values():
    hi = make_hard_instance(12, 4, 30, np.random.default_rng(3))
    assert max_total_reward(hi.mdp.transition, hi.mdp.reward).max() <= 1 + 1e-12
    for i in range(hi.sub_count):
        pol = hi.special_policy(i)
        start = 2 * i
        assert policy_value(hi.mdp, pol).V[0, start] == 1.0
        for h in range(hi.mdp.horizon):
            bad = pol.copy()
            bad[h, start] = 1 - bad[h, start]
            assert policy_value(hi.mdp, bad).V[0, start] == 0.0


def test_hard_instance_rejects_bad_d():
    for d in (0, 2, 6):
        with pytest.raises(ValueError):
            make_hard_instance(d, 2, 10, np.random.default_rng(0))


# --- features ---------------------------------------------------------------

def test_tabular_features():
    P = np.full((1, 2, 2, 2), 0.5)
    m = MdpSpec(P, np.zeros((1, 2, 2)), InitialStates())
    f = make_tabular_linear(m)
    np.testing.assert_array_equal(f(0, 0), [1, 0, 0, 0])
    np.testing.assert_array_equal(f.table @ f.table.T, np.eye(4))
    assert np.all(np.linalg.norm(f.table, axis=1) == 1)
