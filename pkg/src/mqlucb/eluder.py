"""Complexity measures: generalized eluder dimension on a concrete weighted
sequence, brute-force (Russo-Van Roy) eluder dimension of small finite
classes, and a calibrated check relating the two."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np

from .funcclass import FiniteClass, LinearClass

MAX_DOMAIN = 12
MAX_CLASS = 64
BOUND_CONSTANT = 10.0


def _with_lam(cls, lam):
    if lam is None or lam == cls.lam:
        return cls
    if isinstance(cls, LinearClass):
        return LinearClass(cls.features, lam=lam, radius=cls.radius, L=cls.L)
    return FiniteClass(cls.values, cls.num_actions, cls.L, lam=lam, max_functions=cls.size)


def generalized_dim(cls, Z, sigma, lam: float | None = None, *, alpha: float | None = None) -> float:
    """Sum over the stream of min(1, D^2(z_i; z_<i, sigma_<i) / sigma_i^2).

    ``Z`` holds domain indices; for a linear class it may instead be a 2-D
    array of feature vectors.
    """
    Z = np.asarray(Z)
    sigma = np.asarray(sigma, dtype=float)
    if len(Z) != len(sigma):
        raise ValueError(f"Z has {len(Z)} points but sigma has {len(sigma)} weights")
    if np.any(sigma <= 0):
        raise ValueError("weights must be positive")
    if alpha is not None and np.any(sigma < alpha):
        raise ValueError(f"weights must be >= alpha={alpha}")
    cls = _with_lam(cls, lam)
    unc = cls.new_uncertainty()
    raw = isinstance(cls, LinearClass) and Z.ndim == 2
    total = 0.0
    for z, s in zip(Z, sigma):
        if raw:
            d2 = float(unc.gram.quad_inv(z)[0])
            unc.gram.add(z, 1.0 / s**2)
        else:
            d2 = unc.d2(int(z))
            unc.update(int(z), s)
        total += min(1.0, d2 / s**2)
    return total


def eluder_dim_bruteforce(values, eps: float) -> int:
    """Longest sequence in which every point is eps'-independent of its
    predecessors, for one eps' >= eps shared by the whole sequence.

    ``values[i, z]`` is f_i(z). Independence: some pair (f, f') has
    sqrt(sum over predecessors (f - f')^2) <= eps' yet |f(z) - f'(z)| > eps'.
    A point can never be independent of a prefix that already contains it, so
    sequences are searched as ordered subsets with memoization on the set.
    """
    V = np.asarray(values, dtype=float)
    if V.ndim != 2:
        raise ValueError("values must be a (num_functions, num_points) array")
    m, n = V.shape
    if n > MAX_DOMAIN or m > MAX_CLASS:
        raise ValueError(f"brute force needs |Z| <= {MAX_DOMAIN} and |F| <= {MAX_CLASS}, got {n}, {m}")
    if m < 2 or n == 0:
        return 0
    i, j = np.triu_indices(m, k=1)
    delta = np.abs(V[i] - V[j])  # (pairs, n)
    sq = delta**2
    # Only eps' just below a realized gap c matters: between gaps, raising eps'
    # loosens the distance test without changing the gap test.
    gaps = np.unique(np.round(delta[delta > eps], 12))
    best = 0
    for c in gaps:
        c2 = c * c
        wit = delta >= c - 1e-12  # pair p can certify point z

        @lru_cache(maxsize=None)
        def longest(mask: int) -> int:
            members = [z for z in range(n) if mask >> z & 1]
            S = sq[:, members].sum(axis=1)
            live = S < c2 - 1e-12
            if not live.any():
                return 0
            cand = wit[live].any(axis=0)
            out = 0
            for z in range(n):
                if cand[z] and not mask >> z & 1:
                    out = max(out, 1 + longest(mask | 1 << z))
                    if out == n - len(members):
                        break
            return out

        best = max(best, longest(0))
        if best == n:
            break
    return best


@dataclass
class DimReport:
    generalized_dim: float
    eluder_dim: int
    rhs: float
    lam: float
    alpha: float
    M: float
    T: int
    eps: float
    constant: float = BOUND_CONSTANT

    def __post_init__(self):
        if self.generalized_dim < 0 or self.eluder_dim < 0:
            raise ValueError("dimensions must be nonnegative")

    @property
    def ratio(self) -> float:
        return float(self.generalized_dim / self.rhs) if self.rhs > 0 else math.inf

    @property
    def violated(self) -> bool:
        return bool(self.generalized_dim > self.constant * self.rhs)

    def to_dict(self) -> dict:
        return {"schema": "dimreport/v1", **asdict(self), "ratio": self.ratio,
                "violated": self.violated}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "DimReport":
        if d.get("schema") != "dimreport/v1":
            raise ValueError(f"schema: expected 'dimreport/v1', got {d.get('schema')!r}")
        keys = ("generalized_dim", "eluder_dim", "rhs", "lam", "alpha", "M", "T", "eps", "constant")
        return cls(**{k: d[k] for k in keys})


def dimension_bound_rhs(eluder_dim: int, T: int, lam: float, M: float, alpha: float) -> float:
    return eluder_dim * math.log(T) * math.log(lam * T) * math.log(M / alpha) + 1.0 / lam


def check_dimension_bound(cls: FiniteClass, Z, sigma, lam: float | None = None, eps: float | None = None,
                    *, alpha: float | None = None, M: float | None = None) -> DimReport:
    """Both sides of the generalized-vs-standard dimension relation, O-constant 1.

    ``alpha``/``M`` default to the smallest/largest weight in ``sigma``.
    """
    sigma = np.asarray(sigma, dtype=float)
    T = len(sigma)
    if T == 0:
        raise ValueError("need a nonempty sequence")
    lam = cls.lam if lam is None else lam
    eps = 1.0 / math.sqrt(T) if eps is None else eps
    alpha = float(sigma.min()) if alpha is None else alpha
    M = float(sigma.max()) if M is None else M
    if not 0 < alpha <= M:
        raise ValueError("need 0 < alpha <= M")
    lhs = generalized_dim(cls, Z, sigma, lam, alpha=alpha)
    dim_e = eluder_dim_bruteforce(cls.values, eps)
    rhs = dimension_bound_rhs(dim_e, T, lam, M, alpha)
    return DimReport(float(lhs), int(dim_e), float(rhs), float(lam), float(alpha), float(M), T, float(eps))
