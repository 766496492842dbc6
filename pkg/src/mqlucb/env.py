"""Finite episodic MDPs: construction, validation, simulation and exact DP values.

Stages are 0-indexed in code (h = 0 .. H-1); ``V[H]`` is the terminal zero row.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .funcclass import FeatureMap

MDP_SCHEMA = "mdp/v1"
PROB_TOL = 1e-12


class InvalidMdpError(ValueError):
    pass


@dataclass(frozen=True)
class InitialStates:
    """Per-episode initial state schedule.

    ``mode`` is one of ``fixed`` (always ``state``), ``categorical`` (i.i.d.
    draws from ``probs``) or ``list`` (adversarial, ``states[k-1]`` for episode k).
    """

    mode: str = "fixed"
    state: int = 0
    probs: tuple[float, ...] = ()
    states: tuple[int, ...] = ()

    def initial_state(self, k: int, rng: np.random.Generator | None = None) -> int:
        if self.mode == "fixed":
            return self.state
        if self.mode == "categorical":
            if rng is None:
                raise ValueError("categorical initial states need an rng")
            return int(rng.choice(len(self.probs), p=np.asarray(self.probs)))
        if self.mode == "list":
            if not 1 <= k <= len(self.states):
                raise IndexError(f"initial-state list has no entry for episode {k}")
            return self.states[k - 1]
        raise ValueError(f"unknown initial-state mode {self.mode!r}")

    def support(self, num_states: int) -> list[int]:
        if self.mode == "fixed":
            return [self.state]
        if self.mode == "categorical":
            return [s for s, p in enumerate(self.probs) if p > 0]
        return sorted(set(self.states)) if self.states else list(range(num_states))

    def to_dict(self) -> dict:
        if self.mode == "fixed":
            return {"mode": "fixed", "state": self.state}
        if self.mode == "categorical":
            return {"mode": "categorical", "probs": list(self.probs)}
        return {"mode": "list", "states": list(self.states)}

    @classmethod
    def from_dict(cls, d: dict) -> "InitialStates":
        mode = d.get("mode", "fixed")
        if mode == "fixed":
            return cls("fixed", state=int(d.get("state", 0)))
        if mode == "categorical":
            return cls("categorical", probs=tuple(float(p) for p in d["probs"]))
        if mode == "list":
            return cls("list", states=tuple(int(s) for s in d["states"]))
        raise InvalidMdpError(f"initial_state.mode: unknown mode {mode!r}")


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """Time-inhomogeneous finite MDP.

    ``transition`` has shape (H, S, A, S) and ``reward`` shape (H, S, A).
    Construction validates stochastic rows, rewards in [0, 1] and that no
    positive-probability trajectory collects more than 1 in total.
    """

    transition: np.ndarray
    reward: np.ndarray
    initial: InitialStates = field(default_factory=InitialStates)

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        r = np.array(self.reward, dtype=float)
        P.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", r)
        self.validate()

    @property
    def horizon(self) -> int:
        return self.transition.shape[0]

    @property
    def num_states(self) -> int:
        return self.transition.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[2]

    def validate(self) -> None:
        P, r = self.transition, self.reward
        if P.ndim != 4 or P.shape[1] != P.shape[3]:
            raise InvalidMdpError(f"transition: expected shape (H,S,A,S), got {P.shape}")
        if r.shape != P.shape[:3]:
            raise InvalidMdpError(f"reward: expected shape {P.shape[:3]}, got {r.shape}")
        if np.any(P < 0):
            raise InvalidMdpError("transition: negative probability")
        bad = np.abs(P.sum(axis=-1) - 1.0) > PROB_TOL
        if bad.any():
            h, s, a = np.argwhere(bad)[0]
            raise InvalidMdpError(f"transition[{h}][{s}][{a}]: row does not sum to 1")
        if np.any(r < 0) or np.any(r > 1):
            raise InvalidMdpError("reward: values must lie in [0, 1]")
        top = max_total_reward(P, r).max()
        if top > 1 + PROB_TOL:
            raise InvalidMdpError(f"reward: a reachable trajectory collects {top:.6g} > 1")
        init = self.initial
        S = self.num_states
        if init.mode == "fixed" and not 0 <= init.state < S:
            raise InvalidMdpError("initial_state.state: out of range")
        if init.mode == "categorical":
            p = np.asarray(init.probs)
            if p.shape != (S,) or np.any(p < 0) or abs(p.sum() - 1) > PROB_TOL:
                raise InvalidMdpError("initial_state.probs: not a distribution over states")
        if init.mode == "list" and any(not 0 <= s < S for s in init.states):
            raise InvalidMdpError("initial_state.states: state out of range")

    def with_initial(self, initial: InitialStates) -> "MdpSpec":
        return MdpSpec(self.transition, self.reward, initial)

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "schema": MDP_SCHEMA,
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "horizon": self.horizon,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "initial_state": self.initial.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MdpSpec":
        if d.get("schema") != MDP_SCHEMA:
            raise InvalidMdpError(f"schema: expected {MDP_SCHEMA!r}, got {d.get('schema')!r}")
        try:
            P = np.asarray(d["transition"], dtype=float)
            r = np.asarray(d["reward"], dtype=float)
        except KeyError as e:
            raise InvalidMdpError(f"{e.args[0]}: missing field") from None
        except ValueError as e:
            raise InvalidMdpError(f"transition/reward: {e}") from None
        expect = (int(d.get("horizon", -1)), int(d.get("num_states", -1)), int(d.get("num_actions", -1)))
        if P.ndim != 4 or P.shape[:3] != expect:
            raise InvalidMdpError(f"transition: shape {P.shape} disagrees with (horizon, num_states, num_actions)={expect}")
        return cls(P, r, InitialStates.from_dict(d.get("initial_state", {})))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path: str | Path) -> "MdpSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def max_total_reward(P: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Largest cumulative reward from each (h=0, s) over positive-probability paths."""
    H, S, A, _ = P.shape
    M = np.zeros(S)
    reach = P > 0
    for h in range(H - 1, -1, -1):
        # best continuation among reachable successors
        cont = np.where(reach[h], M[None, None, :], -np.inf).max(axis=-1)
        M = (r[h] + cont).max(axis=-1)
    return M


@dataclass(frozen=True)
class Step:
    h: int
    state: int
    action: int
    reward: float
    next_state: int


@dataclass(frozen=True)
class Trajectory:
    k: int
    steps: tuple[Step, ...]

    @property
    def total_reward(self) -> float:
        return float(sum(st.reward for st in self.steps))


@dataclass(frozen=True, eq=False)
class ValueTables:
    V: np.ndarray  # (H+1, S)
    Q: np.ndarray  # (H, S, A)


def optimal_values(mdp: MdpSpec) -> ValueTables:
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.reward[h] + mdp.transition[h] @ V[h + 1]
        V[h] = Q[h].max(axis=-1)
    return ValueTables(V, Q)


def _as_action_probs(policy, H: int, S: int, A: int) -> np.ndarray:
    pol = np.asarray(policy)
    if pol.shape == (H, S):
        probs = np.zeros((H, S, A))
        np.put_along_axis(probs, pol[..., None].astype(int), 1.0, axis=-1)
        return probs
    if pol.shape == (H, S, A):
        return pol.astype(float)
    raise ValueError(f"policy must have shape (H,S) or (H,S,A), got {pol.shape}")


def policy_value(mdp: MdpSpec, policy) -> ValueTables:
    """Exact value of a Markov policy.

    ``policy`` is either an (H, S) integer action table or an (H, S, A) table
    of action probabilities.
    """
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    probs = _as_action_probs(policy, H, S, A)
    V = np.zeros((H + 1, S))
    Q = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.reward[h] + mdp.transition[h] @ V[h + 1]
        V[h] = (probs[h] * Q[h]).sum(axis=-1)
    return ValueTables(V, Q)


def next_value_variance(mdp: MdpSpec, V: np.ndarray) -> np.ndarray:
    """[Var_h V_{h+1}](s, a) for every stage, shape (H, S, A)."""
    P = mdp.transition
    out = np.empty(mdp.reward.shape)
    for h in range(mdp.horizon):
        m1 = P[h] @ V[h + 1]
        m2 = P[h] @ V[h + 1] ** 2
        out[h] = np.maximum(m2 - m1**2, 0.0)
    return out


def simulate_episode(mdp: MdpSpec, policy, k: int, rng: np.random.Generator) -> Trajectory:
    """Roll out one episode; ``policy`` as in :func:`policy_value`."""
    H, S, A = mdp.horizon, mdp.num_states, mdp.num_actions
    pol = np.asarray(policy)
    stochastic = pol.shape == (H, S, A)
    s = mdp.initial.initial_state(k, rng)
    steps = []
    for h in range(H):
        if stochastic:
            a = int(rng.choice(A, p=pol[h, s]))
        else:
            a = int(pol[h, s])
        s_next = int(rng.choice(S, p=mdp.transition[h, s, a]))
        steps.append(Step(h, s, a, float(mdp.reward[h, s, a]), s_next))
        s = s_next
    return Trajectory(k, tuple(steps))


# instance generators -------------------------------------------------------

def chain2() -> MdpSpec:
    """Two-state, two-stage chain: reward 1 only for (s1, a0) at the last stage."""
    P = np.zeros((2, 2, 2, 2))
    P[0, 0, 0, 1] = 1.0  # a0 moves s0 -> s1
    P[0, 0, 1, 0] = 1.0
    P[:, 1, :, 1] = 1.0
    P[1, 0, :, 0] = 1.0
    r = np.zeros((2, 2, 2))
    r[1, 1, 0] = 1.0
    return MdpSpec(P, r, InitialStates("fixed", state=0))


def random_mdp(num_states: int, num_actions: int, horizon: int, rng: np.random.Generator,
               concentration: float = 1.0, initial: InitialStates | None = None) -> MdpSpec:
    """Dirichlet transitions and uniform rewards rescaled so every path sums to <= 1."""
    P = rng.dirichlet(np.full(num_states, concentration), size=(horizon, num_states, num_actions))
    # renormalize in float64 so rows pass the 1e-12 check exactly
    P /= P.sum(axis=-1, keepdims=True)
    r = rng.uniform(size=(horizon, num_states, num_actions))
    top = max_total_reward(P, r).max()
    if top > 1:
        r = r / top * (1 - 1e-12)
    return MdpSpec(P, r, initial or InitialStates("fixed", state=0))


def goal_mdp(num_states: int, num_actions: int, horizon: int, rng: np.random.Generator,
             concentration: float = 1.0, goal_prob: float = 0.3,
             initial: InitialStates | None = None) -> MdpSpec:
    """Dirichlet transitions with sparse 0/1 rewards at the last stage only.

    Each final-stage pair pays 1 with probability ``goal_prob``; at least one
    pair always pays so the instance is never trivial.
    """
    P = rng.dirichlet(np.full(num_states, concentration), size=(horizon, num_states, num_actions))
    P /= P.sum(axis=-1, keepdims=True)
    r = np.zeros((horizon, num_states, num_actions))
    r[-1] = (rng.uniform(size=(num_states, num_actions)) < goal_prob).astype(float)
    if not r[-1].any():
        r[-1].flat[rng.integers(num_states * num_actions)] = 1.0
    return MdpSpec(P, r, initial or InitialStates("fixed", state=0))


@dataclass(frozen=True, eq=False)
class HardInstance:
    """d/4 disconnected two-state combination locks with one epoch each.

    Sub-MDP ``i`` owns states ``2i`` (start) and ``2i+1`` (absorbing).
    """

    sub_count: int
    special_actions: np.ndarray  # (sub_count, H)
    epoch_starts: tuple[int, ...]  # first episode (1-based) of each epoch
    mdp: MdpSpec

    def epoch_of(self, k: int) -> int:
        return int(np.searchsorted(self.epoch_starts, k, side="right")) - 1

    def special_policy(self, i: int) -> np.ndarray:
        H = self.special_actions.shape[1]
        pol = np.zeros((H, self.mdp.num_states), dtype=int)
        pol[:, 2 * i] = self.special_actions[i]
        return pol


def make_hard_instance(d: int, H: int, K: int, rng: np.random.Generator) -> HardInstance:
    if d < 4 or d % 4:
        raise ValueError(f"d must be a positive multiple of 4, got {d}")
    if H < 1 or K < 1:
        raise ValueError("H and K must be positive")
    n = d // 4
    special = rng.integers(0, 2, size=(n, H))
    S = 2 * n
    P = np.zeros((H, S, 2, S))
    r = np.zeros((H, S, 2))
    for i in range(n):
        start, sink = 2 * i, 2 * i + 1
        for h in range(H):
            good = special[i, h]
            P[h, start, good, start] = 1.0
            P[h, start, 1 - good, sink] = 1.0
            P[h, sink, :, sink] = 1.0
        r[H - 1, start, special[i, H - 1]] = 1.0
    starts = tuple(i * K // n + 1 for i in range(n))
    schedule = [2 * (int(np.searchsorted(starts, k, side="right")) - 1) for k in range(1, K + 1)]
    mdp = MdpSpec(P, r, InitialStates("list", states=tuple(schedule)))
    return HardInstance(n, special, starts, mdp)


def make_tabular_linear(mdp: MdpSpec) -> FeatureMap:
    """One-hot embedding of (s, a) in R^{S*A}."""
    n = mdp.num_states * mdp.num_actions
    return FeatureMap(np.eye(n), mdp.num_actions)
