"""Comparison agents: LSVI-UCB, determinant-doubling rare switching, uniform random."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .algorithm import Agent
from .env import MdpSpec, Trajectory
from .funcclass import CholeskyGram, FeatureMap
from .metrics import RunMetrics
from .runner import run_agent, run_budget_limited

RULES = ("every_episode", "det_doubling")


@dataclass
class BaselineConfig:
    lam: float = 1.0
    c_beta: float = 0.5
    rule: str = "every_episode"
    budget: int | None = None

    def validate(self) -> None:
        if self.rule not in RULES:
            raise ValueError(f"rule: expected one of {RULES}, got {self.rule!r}")
        if self.lam <= 0:
            raise ValueError("lam: must be > 0")
        if self.budget is not None and self.budget < 0:
            raise ValueError("budget: must be >= 0")


class LsviUcbAgent(Agent):
    """Unweighted ridge value iteration with elliptical bonuses.

    With ``rule='det_doubling'`` it replans only once some stage's Gram
    determinant has doubled since the last plan.
    """

    def __init__(self, mdp: MdpSpec, features: FeatureMap, cfg: BaselineConfig | None = None):
        self.cfg = cfg or BaselineConfig()
        self.cfg.validate()
        self.name = "lsvi_ucb" if self.cfg.rule == "every_episode" else "lsvi_ucb_rare"
        self.H, self.S, self.A = mdp.horizon, mdp.num_states, mdp.num_actions
        self.features = features
        d = features.dim
        self.grams = [CholeskyGram(d, self.cfg.lam) for _ in range(self.H)]
        self.logdet_last = [g.logdet() for g in self.grams]
        self.z: list[list[int]] = [[] for _ in range(self.H)]
        self.r: list[list[float]] = [[] for _ in range(self.H)]
        self.nxt: list[list[int]] = [[] for _ in range(self.H)]
        self.Q = np.ones((self.H, self.S, self.A))
        self.beta = 0.0
        self._switches = 0

    @property
    def switches(self) -> int:
        return self._switches

    def wants_switch(self, k: int) -> bool:
        if k == 1 or self.cfg.rule == "every_episode":
            return True
        return any(g.logdet() >= last + math.log(2) for g, last in zip(self.grams, self.logdet_last))

    def plan(self, k: int) -> None:
        Phi_all = self.features.table
        self.beta = self.cfg.c_beta * math.sqrt(self.features.dim * math.log(1 + k))
        V_next = np.zeros(self.S)
        for h in range(self.H - 1, -1, -1):
            g = self.grams[h]
            if self.z[h]:
                Phi = Phi_all[self.z[h]]
                y = np.asarray(self.r[h]) + V_next[self.nxt[h]]
                theta = g.solve(Phi.T @ y)
            else:
                theta = np.zeros(self.features.dim)
            q = Phi_all @ theta + self.beta * np.sqrt(g.quad_inv(Phi_all))
            self.Q[h] = np.clip(q, 0.0, 1.0).reshape(self.S, self.A)
            V_next = self.Q[h].max(axis=-1)
        self.logdet_last = [g.logdet() for g in self.grams]
        self._switches += 1

    def policy(self) -> np.ndarray:
        return self.Q.argmax(axis=-1)

    def upper_values(self) -> np.ndarray:
        return self.Q.max(axis=-1)

    def observe(self, traj: Trajectory) -> None:
        for st in traj.steps:
            z = st.state * self.A + st.action
            self.grams[st.h].add(self.features.table[z])
            self.z[st.h].append(z)
            self.r[st.h].append(st.reward)
            self.nxt[st.h].append(st.next_state)

    def max_bonus(self, traj: Trajectory) -> float:
        return max(self.beta * math.sqrt(self.grams[st.h].quad_inv(
            self.features.table[st.state * self.A + st.action])[0]) for st in traj.steps)


class UniformRandomAgent(Agent):
    """Plays every action with equal probability; never learns."""

    name = "uniform"

    def __init__(self, mdp: MdpSpec):
        H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
        self._policy = np.full((H, S, A), 1.0 / A)

    def wants_switch(self, k: int) -> bool:
        return False

    def policy(self) -> np.ndarray:
        return self._policy


def run_lsvi_ucb(mdp: MdpSpec, features: FeatureMap, cfg: BaselineConfig | None, K: int,
                 rng: np.random.Generator, seed: int = 0) -> RunMetrics:
    cfg = cfg or BaselineConfig()
    cfg = BaselineConfig(cfg.lam, cfg.c_beta, "every_episode", cfg.budget)
    agent = LsviUcbAgent(mdp, features, cfg)
    return run_agent(mdp, agent, K, rng, budget=cfg.budget, seed=seed)


def run_det_rare_switch(mdp: MdpSpec, features: FeatureMap, cfg: BaselineConfig | None, K: int,
                        rng: np.random.Generator, seed: int = 0) -> RunMetrics:
    cfg = cfg or BaselineConfig()
    cfg = BaselineConfig(cfg.lam, cfg.c_beta, "det_doubling", cfg.budget)
    agent = LsviUcbAgent(mdp, features, cfg)
    return run_agent(mdp, agent, K, rng, budget=cfg.budget, seed=seed)


def run_uniform(mdp: MdpSpec, K: int, rng: np.random.Generator, seed: int = 0) -> RunMetrics:
    return run_agent(mdp, UniformRandomAgent(mdp), K, rng, seed=seed)


__all__ = ["BaselineConfig", "LsviUcbAgent", "UniformRandomAgent", "run_lsvi_ucb",
           "run_det_rare_switch", "run_uniform", "run_budget_limited"]
