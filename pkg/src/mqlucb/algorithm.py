"""Monotonic Q-learning with UCB bonuses and rare, uncertainty-triggered replanning."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

from .env import MdpSpec, Trajectory
from .funcclass import FeatureMap, FiniteClass, LinearClass, Regressor, StageDataset, fit_weighted_ls

TOL = 1e-12


@dataclass
class AlgoConfig:
    """Hyperparameters.

    ``alpha`` and ``eps_cov`` default to the values tied to the run length
    (``1/sqrt(KH)`` and ``1/(KLH)``) when left as None. ``gamma`` defaults to
    1 in practical mode and to its confidence formula in theory mode.
    ``variance_log_factor`` multiplies the F term of the variance estimate in
    practical mode; theory mode uses the covering proxies instead.
    """

    lam: float = 1.0
    alpha: float | None = None
    gamma: float | None = None
    chi: float = 1.0
    L: float = 1.0
    mode: str = "practical"
    c_hat: float = 0.5
    c_beta: float = 0.5
    c_tilde: float = 0.5
    variance_log_factor: float = 1.0
    bonus_ratio: float = 1.0
    delta: float = 0.05
    log_nf: float = 1.0
    log_nb: float = 1.0
    eps_cov: float | None = None
    q_init: float = 1.0

    def validate(self) -> None:
        if self.mode not in ("practical", "theory"):
            raise ValueError(f"mode: expected 'practical' or 'theory', got {self.mode!r}")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha: must be > 0")
        if self.chi <= 0:
            raise ValueError("chi: must be > 0")
        if self.lam <= 0:
            raise ValueError("lam: must be > 0")
        if self.bonus_ratio < 1:
            raise ValueError("bonus_ratio: must be >= 1")
        for name in ("c_hat", "c_beta", "c_tilde", "variance_log_factor", "log_nf", "log_nb"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name}: must be >= 0")

    def resolved(self, K: int, H: int) -> "AlgoConfig":
        cfg = replace(self)
        if cfg.alpha is None:
            cfg.alpha = 1.0 / math.sqrt(K * H)
        if cfg.eps_cov is None:
            cfg.eps_cov = 1.0 / (K * cfg.L * H)
        cfg.validate()
        return cfg

    @classmethod
    def from_dict(cls, d: dict) -> "AlgoConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"{sorted(unknown)[0]}: unknown config field")
        cfg = cls(**d)
        cfg.validate()
        return cfg


class Radii(NamedTuple):
    beta_hat: float
    beta_check: float
    beta: float
    beta_tilde: float
    gamma: float


def practical_radii(cfg: AlgoConfig, k: int, dim: float) -> Radii:
    base = math.sqrt(dim * math.log(1 + k))
    gamma = 1.0 if cfg.gamma is None else cfg.gamma
    return Radii(cfg.c_hat * base, cfg.c_hat * base, cfg.c_beta * base, cfg.c_tilde * base, gamma)


def _confidence_log(L: float, alpha: float, k: float, H: int, delta: float, K2: float) -> float:
    return math.log(2 * K2 * (2 * math.log(L * L * k / alpha**4) + 2)
                    * (math.log(4 * L / alpha**2) + 2) * H / delta)


def log_cover(cfg: AlgoConfig, switches: int) -> float:
    """log N_eps(k) for the value classes after ``switches`` policy updates."""
    return (switches + 1) * (cfg.log_nf + cfg.log_nb)


def theory_beta(cfg: AlgoConfig, k: int, H: int, K: int, switches: int = 0) -> Radii:
    """Confidence radii with every O(.) constant set to 1.

    Covering numbers enter only through ``log_nf``/``log_nb``; ``cfg`` must
    already carry ``alpha`` and ``eps_cov``.
    """
    L, a, eps, lam, delta = cfg.L, cfg.alpha, cfg.eps_cov, cfg.lam, cfg.delta
    conf = _confidence_log(L, a, k, H, delta, k * k)
    hat2 = conf * (cfg.log_nf + 1) + lam + eps * k * L / a**2
    log_terms = log_cover(cfg, switches) + cfg.log_nf + math.log(H / delta)
    beta2 = 128 * log_terms + 64 * L * eps * k / a**2
    tilde2 = 128 * log_terms + 64 * L * eps * k
    if cfg.gamma is not None:
        gamma = cfg.gamma
    else:
        g2 = (_confidence_log(L, a, K, H, delta, K * K) + 4 * cfg.log_nf
              + 2 * log_cover(cfg, switches))
        gamma = math.sqrt(max(g2, 0.0))
    hat = math.sqrt(max(hat2, 0.0))
    return Radii(hat, hat, math.sqrt(max(beta2, 0.0)), math.sqrt(max(tilde2, 0.0)), gamma)


# ---------------------------------------------------------------------------


class QStack:
    """Optimistic/pessimistic Q tables kept as running min/max over snapshots.

    ``Q[h]`` equals ``min(q_init, 1, min_j upper_j)`` and ``Qc[h]`` equals
    ``max(0, max_j lower_j)`` over the snapshots pushed at stage ``h``.
    """

    def __init__(self, H: int, S: int, A: int, q_init: float = 1.0):
        self.shape = (S, A)
        self.q_init = min(q_init, 1.0)
        self.Q = np.full((H, S, A), self.q_init)
        self.Qc = np.zeros((H, S, A))
        self.snapshots: list[list[tuple[int, np.ndarray, np.ndarray]]] = [[] for _ in range(H)]
        self.violations = {"q_increase": 0, "qc_decrease": 0, "order": 0, "range": 0}

    def push(self, h: int, k: int, upper: np.ndarray, lower: np.ndarray) -> None:
        upper = np.asarray(upper, dtype=float).reshape(self.shape)
        lower = np.asarray(lower, dtype=float).reshape(self.shape)
        old_q, old_qc = self.Q[h].copy(), self.Qc[h].copy()
        self.Q[h] = np.minimum(old_q, np.minimum(upper, 1.0))
        self.Qc[h] = np.maximum(old_qc, np.maximum(lower, 0.0))
        self.snapshots[h].append((k, upper, lower))
        v = self.violations
        v["q_increase"] += int(np.sum(self.Q[h] > old_q + TOL))
        v["qc_decrease"] += int(np.sum(self.Qc[h] < old_qc - TOL))
        v["order"] += int(np.sum(self.Qc[h] > self.Q[h] + TOL))
        v["range"] += int(np.sum((self.Q[h] < -TOL) | (self.Q[h] > 1 + TOL)
                                 | (self.Qc[h] < -TOL) | (self.Qc[h] > 1 + TOL)))

    def evaluate(self, h: int) -> tuple[np.ndarray, np.ndarray]:
        """Recompute stage ``h`` from the stored snapshots."""
        q = np.full(self.shape, self.q_init)
        qc = np.zeros(self.shape)
        for _, upper, lower in self.snapshots[h]:
            q = np.minimum(q, np.minimum(upper, 1.0))
            qc = np.maximum(qc, lower)
        return q, np.maximum(qc, 0.0)

    def V(self) -> np.ndarray:
        return self.Q.max(axis=-1)

    def Vc(self) -> np.ndarray:
        return self.Qc.max(axis=-1)

    def greedy_policy(self) -> np.ndarray:
        return self.Q.argmax(axis=-1)


def act(qstack: QStack, h: int, s: int) -> int:
    # np.argmax returns the first maximizer: lowest action index on ties
    return int(np.argmax(qstack.Q[h, s]))


@dataclass
class SwitchState:
    accum: np.ndarray
    k_last: int = 0
    switches: int = 0

    @classmethod
    def fresh(cls, H: int) -> "SwitchState":
        return cls(np.zeros(H))


def should_switch(sw: SwitchState, cfg: AlgoConfig, k: int) -> bool:
    return k == 1 or bool(np.any(sw.accum >= cfg.chi))


class VarianceRecord(NamedTuple):
    var_hat: float
    E: float
    F: float
    sigma: float
    sigma_bar: float


def estimate_variance(f_hat: float, f_check: float, f_tilde: float, D: float, *, beta: float,
                      beta_tilde: float, gamma: float, alpha: float, L: float = 1.0,
                      log_factor: float = 1.0) -> VarianceRecord:
    """Variance proxy and regression weight for one visited pair.

    ``D`` is the (non-squared) uncertainty at the pair under the current data.
    """
    var_hat = max(f_tilde - f_hat * f_hat, 0.0)
    E = (2 * L * beta + beta_tilde) * min(1.0, D)
    F = max(log_factor * min(1.0, 2 * f_hat - 2 * f_check + 4 * beta * D), 0.0)
    sigma = math.sqrt(max(var_hat + E + F, 0.0))
    sigma_bar = max(sigma, alpha, gamma * math.sqrt(D))
    return VarianceRecord(var_hat, E, F, sigma, sigma_bar)


# ---------------------------------------------------------------------------


class Agent:
    """Episode-loop protocol used by :func:`mqlucb.runner.run_agent`."""

    name = "agent"
    switches = 0

    def wants_switch(self, k: int) -> bool:
        raise NotImplementedError

    def plan(self, k: int) -> None:
        raise NotImplementedError

    def policy(self) -> np.ndarray:
        raise NotImplementedError

    def observe(self, traj: Trajectory) -> None:
        pass

    def max_bonus(self, traj: Trajectory) -> float:
        return 0.0

    def upper_values(self) -> np.ndarray | None:
        return None

    def counters(self) -> dict:
        return {}


def make_class(mdp: MdpSpec, fc, lam: float):
    if isinstance(fc, (LinearClass, FiniteClass)):
        return fc
    if isinstance(fc, FeatureMap):
        return LinearClass(fc, lam=lam)
    raise TypeError(f"unsupported function class {type(fc).__name__}")


class MqlUcbAgent(Agent):
    name = "mql_ucb"

    def __init__(self, mdp: MdpSpec, fclass, cfg: AlgoConfig, K: int, check_stability: bool = False):
        if K < 1:
            raise ValueError("K must be >= 1")
        self.H, self.S, self.A = mdp.horizon, mdp.num_states, mdp.num_actions
        self.K = K
        self.cfg = cfg.resolved(K, self.H)
        self.cls = make_class(mdp, fclass, self.cfg.lam)
        if self.cls.domain_size != self.S * self.A:
            raise ValueError("function class domain does not match S*A")
        self.data = [StageDataset() for _ in range(self.H)]
        self.unc = [self.cls.new_uncertainty() for _ in range(self.H)]
        self.qstack = QStack(self.H, self.S, self.A, self.cfg.q_init)
        self.switch = SwitchState.fresh(self.H)
        n = self.S * self.A
        zero = Regressor.zero(n)
        self.f_hat = [zero] * self.H
        self.f_check = [zero] * self.H
        self.f_tilde = [zero] * self.H
        self.plan_radii = None
        self.check_stability = check_stability
        self.diag = {"sigma_floor": 0, "stability": 0, "max_residual": 0.0, "plans": 0}
        self.variance_log: list[tuple[int, int, VarianceRecord]] = []
        self.keep_variance_log = False

    @property
    def switches(self) -> int:
        return self.switch.switches

    def radii(self, k: int) -> Radii:
        if self.cfg.mode == "theory":
            return theory_beta(self.cfg, k, self.H, self.K, self.switch.switches)
        return practical_radii(self.cfg, k, self.cls.complexity)

    def log_factor(self) -> float:
        if self.cfg.mode == "theory":
            return self.cfg.log_nf + log_cover(self.cfg, self.switch.switches)
        return self.cfg.variance_log_factor

    def oracle(self, d2):
        """D-bar from D^2: the exact value scaled by the configured ratio."""
        return self.cfg.bonus_ratio * np.sqrt(np.maximum(d2, 0.0))

    def wants_switch(self, k: int) -> bool:
        go = should_switch(self.switch, self.cfg, k)
        if not go and self.check_stability:
            self._check_stability()
        return go

    def _check_stability(self) -> None:
        chi = self.cfg.chi
        for u in self.unc:
            cur, frz = u.d2_all("current"), u.d2_all("frozen")
            self.diag["stability"] += int(np.sum(cur < frz / (1 + chi) - 1e-12))

    def plan(self, k: int) -> None:
        rad = self.radii(k)
        self.plan_radii = rad
        V_next = np.zeros(self.S)
        Vc_next = np.zeros(self.S)
        for h in range(self.H - 1, -1, -1):
            data, unc = self.data[h], self.unc[h]
            data.retarget(V_next, Vc_next)
            fh = fit_weighted_ls(self.cls, data, "optimistic", unc)
            fc = fit_weighted_ls(self.cls, data, "pessimistic", unc)
            ft = fit_weighted_ls(self.cls, data, "squared", unc)
            self.diag["max_residual"] = max(self.diag["max_residual"], fh.residual, fc.residual, ft.residual)
            D = self.oracle(unc.d2_all("current"))
            self.qstack.push(h, k, fh.values + rad.beta_hat * D, fc.values - rad.beta_check * D)
            self.f_hat[h], self.f_check[h], self.f_tilde[h] = fh, fc, ft
            V_next = self.qstack.Q[h].max(axis=-1)
            Vc_next = self.qstack.Qc[h].max(axis=-1)
        for u in self.unc:
            u.freeze()
        self.switch.accum[:] = 0.0
        self.switch.k_last = k
        self.switch.switches += 1
        self.diag["plans"] += 1

    def policy(self) -> np.ndarray:
        return self.qstack.greedy_policy()

    def upper_values(self) -> np.ndarray:
        return self.qstack.V()

    def observe(self, traj: Trajectory) -> None:
        cfg = self.cfg
        rad = self.radii(traj.k)
        log_factor = self.log_factor()
        for st in traj.steps:
            h = st.h
            z = st.state * self.A + st.action
            unc = self.unc[h]
            D = float(self.oracle(unc.d2(z, "current")))
            rec = estimate_variance(self.f_hat[h](z), self.f_check[h](z), self.f_tilde[h](z), D,
                                    beta=rad.beta, beta_tilde=rad.beta_tilde, gamma=rad.gamma,
                                    alpha=cfg.alpha, L=cfg.L, log_factor=log_factor)
            if rec.sigma_bar < cfg.alpha or rec.sigma_bar < rad.gamma * math.sqrt(D) - TOL:
                self.diag["sigma_floor"] += 1
            if self.keep_variance_log:
                self.variance_log.append((traj.k, h, rec))
            d2_frozen = float(self.oracle(unc.d2(z, "frozen"))) ** 2
            self.switch.accum[h] += d2_frozen / rec.sigma_bar**2
            unc.update(z, rec.sigma_bar, cfg.alpha)
            self.data[h].append(z, rec.sigma_bar, st.reward, st.next_state)

    def max_bonus(self, traj: Trajectory) -> float:
        if self.plan_radii is None:
            return 0.0
        zs = [st.state * self.A + st.action for st in traj.steps]
        return max(self.plan_radii.beta_hat * float(self.oracle(self.unc[st.h].d2(z, "frozen")))
                   for st, z in zip(traj.steps, zs))

    def counters(self) -> dict:
        out = {f"qstack_{k}": v for k, v in self.qstack.violations.items()}
        out["sigma_floor_violations"] = self.diag["sigma_floor"]
        out["stability_violations"] = self.diag["stability"]
        out["max_normal_residual"] = self.diag["max_residual"]
        return out


def run_mql_ucb(mdp: MdpSpec, fclass, cfg: AlgoConfig, K: int, rng: np.random.Generator,
                seed: int = 0, check_stability: bool = False):
    from .runner import run_agent

    agent = MqlUcbAgent(mdp, fclass, cfg, K, check_stability=check_stability)
    return run_agent(mdp, agent, K, rng, seed=seed)
