import math

import numpy as np
import pytest

from mqlucb.algorithm import AlgoConfig, MqlUcbAgent
from mqlucb.baselines import (BaselineConfig, LsviUcbAgent, UniformRandomAgent, run_budget_limited,
                              run_det_rare_switch, run_lsvi_ucb, run_uniform)
from mqlucb.env import chain2, goal_mdp, make_tabular_linear, random_mdp
from mqlucb.metrics import RunMetrics
from mqlucb.runner import run_agent


def test_lsvi_switches_every_episode():
    m = random_mdp(3, 2, 3, np.random.default_rng(0))
    r = run_lsvi_ucb(m, make_tabular_linear(m), None, 120, np.random.default_rng(0))
    assert r.total_switches == 120
    np.testing.assert_array_equal(r.switches, np.arange(1, 121))


def test_lsvi_chain2_converges():
    m = chain2()
    r = run_lsvi_ucb(m, make_tabular_linear(m), None, 200, np.random.default_rng(0))
    assert np.all(r.regret[-100:] == 0)


def test_lsvi_deterministic():
    m = random_mdp(3, 2, 3, np.random.default_rng(1))
    a = run_lsvi_ucb(m, make_tabular_linear(m), None, 80, np.random.default_rng(9), seed=9)
    b = run_lsvi_ucb(m, make_tabular_linear(m), None, 80, np.random.default_rng(9), seed=9)
    assert a == b


def test_det_rare_switch_bound():
    m = goal_mdp(4, 3, 3, np.random.default_rng(2))
    K = 2000
    r = run_det_rare_switch(m, make_tabular_linear(m), None, K, np.random.default_rng(2))
    assert r.total_switches <= 3 * 12 * 3 * math.log2(K + 1)
    assert r.total_switches < K


def _one_stage_agent():
    P = np.full((1, 2, 2, 2), 0.5)
    from mqlucb.env import InitialStates, MdpSpec
    m = MdpSpec(P, np.zeros((1, 2, 2)), InitialStates())
    ag = LsviUcbAgent(m, make_tabular_linear(m), BaselineConfig(rule="det_doubling"))
    ag.plan(1)
    return ag


def test_det_doubling_triggers_on_doubled_entry():
    ag = _one_stage_agent()
    assert not ag.wants_switch(2)  # zero-update stretch
    ag.grams[0].add(np.eye(4)[0])  # diag entry 1 -> 2 doubles the determinant
    assert ag.wants_switch(3)


def test_det_doubling_needs_full_doubling():
    ag = _one_stage_agent()
    ag.grams[0].add(np.eye(4)[0], 0.9)
    assert not ag.wants_switch(2)


def test_baseline_config_validation():
    with pytest.raises(ValueError):
        BaselineConfig(rule="sometimes").validate()
    with pytest.raises(ValueError):
        BaselineConfig(budget=-1).validate()


def test_budget_zero_plays_initial_policy():
    m = random_mdp(3, 3, 2, np.random.default_rng(3))
    ag = MqlUcbAgent(m, make_tabular_linear(m), AlgoConfig(), 50)
    r = run_budget_limited(m, ag, 0, 50, np.random.default_rng(3))
    assert r.total_switches == 0
    assert np.all(ag.policy() == 0)
    assert r.agent == "mql_ucb_budget0"


def test_budget_k_matches_unwrapped():
    m = random_mdp(3, 3, 2, np.random.default_rng(4))
    f = make_tabular_linear(m)
    a = run_budget_limited(m, MqlUcbAgent(m, f, AlgoConfig(), 60), 60, 60, np.random.default_rng(4))
    b = run_agent(m, MqlUcbAgent(m, f, AlgoConfig(), 60), 60, np.random.default_rng(4))
    np.testing.assert_array_equal(a.regret, b.regret)
    np.testing.assert_array_equal(a.switches, b.switches)


def test_budget_caps_lsvi():
    m = random_mdp(3, 3, 2, np.random.default_rng(5))
    ag = LsviUcbAgent(m, make_tabular_linear(m))
    r = run_budget_limited(m, ag, 7, 40, np.random.default_rng(5))
    assert r.total_switches == 7
    assert np.all(r.switches[6:] == 7)


def test_budget_rejects_negative():
    m = chain2()
    with pytest.raises(ValueError):
        run_budget_limited(m, UniformRandomAgent(m), -1, 5, np.random.default_rng(0))


def test_uniform_agent_value_and_schema():
    m = chain2()
    r = run_uniform(m, 20, np.random.default_rng(0))
    assert isinstance(r, RunMetrics)
    np.testing.assert_allclose(r.regret, 0.75)  # V* = 1, uniform value 0.25
    assert r.total_switches == 0


def test_all_agents_share_schema():
    m = random_mdp(2, 2, 2, np.random.default_rng(6))
    f = make_tabular_linear(m)
    runs = [run_uniform(m, 10, np.random.default_rng(0)),
            run_lsvi_ucb(m, f, None, 10, np.random.default_rng(0)),
            run_det_rare_switch(m, f, None, 10, np.random.default_rng(0)),
            run_agent(m, MqlUcbAgent(m, f, AlgoConfig(), 10), 10, np.random.default_rng(0))]
    for r in runs:
        assert isinstance(r, RunMetrics) and r.K == 10
        assert RunMetrics.from_csv(r.to_csv()) == r
