"""Generic episode loop shared by every agent."""
from __future__ import annotations

import time

import numpy as np

from .algorithm import Agent
from .env import MdpSpec, next_value_variance, optimal_values, policy_value, simulate_episode
from .metrics import RunMetrics

OPT_TOL = 1e-9


class BudgetExceededError(AssertionError):
    pass


def run_agent(mdp: MdpSpec, agent: Agent, K: int, rng: np.random.Generator, *,
              budget: int | None = None, seed: int = 0, name: str | None = None) -> RunMetrics:
    """Play K episodes; regret is measured with exact DP values of each executed policy.

    With ``budget`` set, at most that many plan calls are allowed; later
    switch requests are ignored and the last policy stays in force.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    t0 = time.perf_counter()
    opt = optimal_values(mdp)
    regret = np.zeros(K)
    switches = np.zeros(K, dtype=int)
    bonus = np.zeros(K)
    reward = np.zeros(K)
    var_k = 0.0
    plans = 0
    visited = violations = 0
    cached_policy = None
    V_pi = var_next = None
    for k in range(1, K + 1):
        if agent.wants_switch(k) and (budget is None or plans < budget):
            agent.plan(k)
            plans += 1
        if budget is not None and plans > budget:
            raise BudgetExceededError(f"{plans} plans exceed budget {budget}")
        pol = agent.policy()
        if cached_policy is None or not np.array_equal(pol, cached_policy):
            cached_policy = np.array(pol, copy=True)
            vt = policy_value(mdp, cached_policy)
            V_pi = vt.V
            var_next = next_value_variance(mdp, V_pi)
        traj = simulate_episode(mdp, cached_policy, k, rng)
        s1 = traj.steps[0].state
        regret[k - 1] = opt.V[0, s1] - V_pi[0, s1]
        reward[k - 1] = traj.total_reward
        var_k += float(sum(var_next[st.h, st.state, st.action] for st in traj.steps))
        upper = agent.upper_values()
        if upper is not None:
            for st in traj.steps:
                visited += 1
                if upper[st.h, st.state] < opt.V[st.h, st.state] - OPT_TOL:
                    violations += 1
        bonus[k - 1] = agent.max_bonus(traj)
        agent.observe(traj)
        switches[k - 1] = plans
    counters = dict(agent.counters())
    counters["optimism_violations"] = violations
    counters["visited_pairs"] = visited
    return RunMetrics(name or agent.name, seed, regret, switches, bonus, reward,
                      var_k=var_k, counters=counters, wall_time=time.perf_counter() - t0)


def run_budget_limited(mdp: MdpSpec, agent: Agent, B: int, K: int, rng: np.random.Generator,
                       seed: int = 0) -> RunMetrics:
    if B < 0:
        raise ValueError("budget must be >= 0")
    return run_agent(mdp, agent, K, rng, budget=B, seed=seed, name=f"{agent.name}_budget{B}")
