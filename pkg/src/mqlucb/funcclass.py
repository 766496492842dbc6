"""Function classes, weighted least squares and the D^2 uncertainty oracle.

Two concrete classes are supported on a finite state-action domain indexed by
``z = s * num_actions + a``:

* :class:`LinearClass` -- ``f(z) = <theta, phi(z)>`` over a parameter ball.
  D^2 has the closed form ``phi^T A^{-1} phi`` with the weighted Gram ``A``.
* :class:`FiniteClass` -- an explicit table of function values; D^2 is the
  brute-force supremum over all function pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

COND_LIMIT = 1e12
REFRESH_EVERY = 256
MAX_FINITE_FUNCTIONS = 512

TARGETS = ("optimistic", "pessimistic", "squared")


class IllConditionedError(np.linalg.LinAlgError):
    pass


def cholupdate(L: np.ndarray, x: np.ndarray) -> np.ndarray:
    """In-place rank-1 update of a lower Cholesky factor: L L^T + x x^T."""
    x = np.array(x, dtype=float)
    n = x.shape[0]
    nz = np.flatnonzero(x)
    if nz.size == 0:
        return L
    # columns before the first nonzero entry are unchanged
    for k in range(int(nz[0]), n):
        lkk = float(L[k, k])
        xk = float(x[k])
        r = math.hypot(lkk, xk)
        c = r / lkk
        s = xk / lkk
        L[k, k] = r
        if k + 1 < n:
            L[k + 1:, k] = (L[k + 1:, k] + s * x[k + 1:]) / c
            x[k + 1:] = c * x[k + 1:] - s * L[k + 1:, k]
            if not x[k + 1:].any():
                break
    return L


class CholeskyGram:
    """``reg * I + sum_i w_i x_i x_i^T`` with a maintained lower Cholesky factor.

    The factor is updated by rank-1 steps and rebuilt from the exact
    accumulated matrix every ``REFRESH_EVERY`` updates, or when the cheap
    diagonal condition estimate crosses ``COND_LIMIT``.
    """

    def __init__(self, dim: int, reg: float):
        if reg <= 0:
            raise ValueError("regularizer must be positive")
        self.dim = dim
        self.reg = reg
        self.A = reg * np.eye(dim)
        self.L = np.sqrt(reg) * np.eye(dim)
        self.updates = 0
        self._since_refresh = 0

    def copy(self) -> "CholeskyGram":
        g = CholeskyGram.__new__(CholeskyGram)
        g.dim, g.reg = self.dim, self.reg
        g.A, g.L = self.A.copy(), self.L.copy()
        g.updates, g._since_refresh = self.updates, self._since_refresh
        return g

    def add(self, x: np.ndarray, weight: float = 1.0) -> None:
        x = np.asarray(x, dtype=float)
        self.A += weight * np.outer(x, x)
        cholupdate(self.L, np.sqrt(weight) * x)
        self.updates += 1
        self._since_refresh += 1
        if self._since_refresh >= REFRESH_EVERY or self.condition_estimate() > COND_LIMIT:
            self.refresh()

    def refresh(self) -> None:
        self.L = np.linalg.cholesky(self.A)
        self._since_refresh = 0

    def condition_estimate(self) -> float:
        diag = np.diag(self.L)
        return float((diag.max() / diag.min()) ** 2)

    def check_conditioning(self) -> None:
        if self.condition_estimate() > COND_LIMIT and np.linalg.cond(self.A) > COND_LIMIT:
            raise IllConditionedError(f"Gram condition number exceeds {COND_LIMIT:g}")

    def solve(self, b: np.ndarray) -> np.ndarray:
        return cho_solve((self.L, True), b)

    def quad_inv(self, X: np.ndarray) -> np.ndarray:
        """x^T A^{-1} x for each row of X (or a single vector)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = solve_triangular(self.L, X.T, lower=True, check_finite=False)
        return (Y * Y).sum(axis=0)

    def logdet(self) -> float:
        return 2.0 * float(np.log(np.diag(self.L)).sum())

    def inverse(self) -> np.ndarray:
        return self.solve(np.eye(self.dim))


# ---------------------------------------------------------------------------
# classes


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Feature table over the finite domain: row ``s * num_actions + a`` is phi(s, a)."""

    table: np.ndarray
    num_actions: int

    def __post_init__(self):
        t = np.array(self.table, dtype=float)
        t.setflags(write=False)
        object.__setattr__(self, "table", t)
        norms = np.linalg.norm(t, axis=1)
        if np.any(norms > 1 + 1e-12):
            raise ValueError(f"feature norm {norms.max():.6g} exceeds 1")

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def domain_size(self) -> int:
        return self.table.shape[0]

    def index(self, s: int, a: int) -> int:
        return s * self.num_actions + a

    def __call__(self, s: int, a: int) -> np.ndarray:
        return self.table[self.index(s, a)]


class LinearClass:
    """Linear functions ``<theta, phi>`` with ``||theta|| <= radius``.

    Pairwise differences of the class fill a ball of radius ``2 * radius``, so
    the sup in D^2 equals ``phi^T (Sigma + lam / (2 radius)^2 I)^{-1} phi``.
    The default radius 0.5 keeps the effective regularizer equal to ``lam``.
    """

    kind = "linear"

    def __init__(self, features: FeatureMap, lam: float = 1.0, radius: float = 0.5, L: float = 1.0):
        self.features = features
        self.lam = lam
        self.radius = radius
        self.L = L

    @property
    def lam_eff(self) -> float:
        return self.lam / (2.0 * self.radius) ** 2

    @property
    def dim(self) -> int:
        return self.features.dim

    @property
    def domain_size(self) -> int:
        return self.features.domain_size

    @property
    def num_actions(self) -> int:
        return self.features.num_actions

    @property
    def complexity(self) -> float:
        return float(self.dim)

    def new_uncertainty(self) -> "LinearUncertainty":
        return LinearUncertainty(self)


class FiniteClass:
    """Explicit finite class: ``values[j, z]`` is f_j(z) on the finite domain."""

    kind = "finite"

    def __init__(self, values: np.ndarray, num_actions: int = 1, L: float | None = None,
                 lam: float = 1.0, max_functions: int = MAX_FINITE_FUNCTIONS):
        v = np.array(values, dtype=float)
        if v.ndim != 2:
            raise ValueError("values must be a (num_functions, domain_size) table")
        if v.shape[0] > max_functions:
            raise ValueError(f"finite class has {v.shape[0]} functions; cap is {max_functions}")
        self.L = float(v.max(initial=0.0)) if L is None else float(L)
        if np.any(v < -1e-12) or np.any(v > self.L + 1e-12):
            raise ValueError(f"function values must lie in [0, {self.L}]")
        v.setflags(write=False)
        self.values = v
        self.num_actions = num_actions
        self.lam = lam

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def domain_size(self) -> int:
        return self.values.shape[1]

    @property
    def complexity(self) -> float:
        return max(1.0, float(np.log(self.size)))

    def diff_sq(self, z) -> np.ndarray:
        """(f_i(z) - f_j(z))^2 for every pair; shape (m, m) or (len(z), m, m)."""
        col = self.values[:, z]
        if np.ndim(z) == 0:
            return (col[:, None] - col[None, :]) ** 2
        col = col.T
        return (col[:, :, None] - col[:, None, :]) ** 2

    def new_uncertainty(self) -> "FiniteUncertainty":
        return FiniteUncertainty(self)


# ---------------------------------------------------------------------------
# per-stage data and uncertainty


class StageDataset:
    """Append-only per-stage history.

    Targets are stored alongside but are rewritten by :meth:`retarget` each
    time the value functions they depend on change.
    """

    def __init__(self):
        self._z: list[int] = []
        self._sigma: list[float] = []
        self._reward: list[float] = []
        self._next: list[int] = []
        self.y = np.zeros(0)
        self.y_check = np.zeros(0)
        self.y_sq = np.zeros(0)

    def __len__(self) -> int:
        return len(self._z)

    def append(self, z: int, sigma_bar: float, reward: float, next_state: int) -> None:
        self._z.append(int(z))
        self._sigma.append(float(sigma_bar))
        self._reward.append(float(reward))
        self._next.append(int(next_state))

    @property
    def z(self) -> np.ndarray:
        return np.asarray(self._z, dtype=int)

    @property
    def sigma_bar(self) -> np.ndarray:
        return np.asarray(self._sigma, dtype=float)

    @property
    def reward(self) -> np.ndarray:
        return np.asarray(self._reward, dtype=float)

    @property
    def next_state(self) -> np.ndarray:
        return np.asarray(self._next, dtype=int)

    def set_targets(self, y, y_check, y_sq) -> None:
        n = len(self)
        self.y, self.y_check, self.y_sq = (np.asarray(t, dtype=float).reshape(n) for t in (y, y_check, y_sq))

    def retarget(self, V_next: np.ndarray, V_check_next: np.ndarray) -> None:
        """Regression targets r + V(s'), r + V_check(s') and (r + V(s'))^2."""
        r, nxt = self.reward, self.next_state
        y = r + V_next[nxt]
        self.set_targets(y, r + V_check_next[nxt], y * y)

    def targets(self, which: str) -> np.ndarray:
        if which == "optimistic":
            return self.y
        if which == "pessimistic":
            return self.y_check
        if which == "squared":
            return self.y_sq
        raise ValueError(f"unknown target {which!r}; expected one of {TARGETS}")


class LinearUncertainty:
    """Weighted Gram (and unit-weight Gram for the second-moment fit) per stage."""

    def __init__(self, cls: LinearClass):
        self.cls = cls
        d = cls.dim
        self.gram = CholeskyGram(d, cls.lam_eff)
        self.unit_gram = CholeskyGram(d, cls.lam_eff)
        self.frozen = self.gram.copy()
        self.count = 0
        self.frozen_count = 0

    def _phi(self, z):
        return self.cls.features.table[z]

    def d2(self, z, which: str = "current"):
        g = self.gram if which == "current" else self.frozen
        out = g.quad_inv(self._phi(z))
        return float(out[0]) if np.ndim(z) == 0 else out

    def d2_all(self, which: str = "current") -> np.ndarray:
        g = self.gram if which == "current" else self.frozen
        return g.quad_inv(self.cls.features.table)

    def d2_vector(self, phi: np.ndarray, which: str = "current") -> np.ndarray:
        g = self.gram if which == "current" else self.frozen
        return g.quad_inv(phi)

    def update(self, z: int, sigma_bar: float, alpha: float = 0.0) -> None:
        if sigma_bar < alpha or sigma_bar <= 0:
            raise ValueError(f"weight {sigma_bar} is below the floor {alpha}")
        phi = self._phi(z)
        self.gram.add(phi, 1.0 / sigma_bar**2)
        self.unit_gram.add(phi, 1.0)
        self.count += 1

    def freeze(self) -> None:
        self.frozen = self.gram.copy()
        self.frozen_count = self.count

    def logdet(self) -> float:
        return self.gram.logdet()


class FiniteUncertainty:
    """Per-pair weighted disagreement sums for a finite class."""

    def __init__(self, cls: FiniteClass):
        self.cls = cls
        m = cls.size
        self.pair_sums = np.zeros((m, m))
        self.frozen = self.pair_sums.copy()
        self.count = 0
        self.frozen_count = 0

    def d2(self, z, which: str = "current"):
        S = self.pair_sums if which == "current" else self.frozen
        num = self.cls.diff_sq(z)
        ratio = num / (S + self.cls.lam)
        if np.ndim(z) == 0:
            return float(ratio.max())
        return ratio.reshape(len(z), -1).max(axis=1)

    def d2_all(self, which: str = "current") -> np.ndarray:
        return self.d2(np.arange(self.cls.domain_size), which)

    def update(self, z: int, sigma_bar: float, alpha: float = 0.0) -> None:
        if sigma_bar < alpha or sigma_bar <= 0:
            raise ValueError(f"weight {sigma_bar} is below the floor {alpha}")
        self.pair_sums += self.cls.diff_sq(int(z)) / sigma_bar**2
        self.count += 1

    def freeze(self) -> None:
        self.frozen = self.pair_sums.copy()
        self.frozen_count = self.count


def d2_from_scratch(cls, z_hist, sigma_hist, query) -> np.ndarray:
    """Recompute D^2 at ``query`` points from raw history (no maintained state)."""
    z_hist = np.asarray(z_hist, dtype=int)
    w = 1.0 / np.asarray(sigma_hist, dtype=float) ** 2
    query = np.atleast_1d(query)
    if cls.kind == "linear":
        Phi = cls.features.table[z_hist]
        A = cls.lam_eff * np.eye(cls.dim) + (Phi * w[:, None]).T @ Phi
        X = cls.features.table[query]
        return np.einsum("ij,ij->i", X, np.linalg.solve(A, X.T).T)
    S = np.zeros((cls.size, cls.size))
    for z, wi in zip(z_hist, w):
        S += wi * cls.diff_sq(int(z))
    return np.array([(cls.diff_sq(int(q)) / (S + cls.lam)).max() for q in query])


# ---------------------------------------------------------------------------
# regression


class Regressor:
    """Fitted function over the finite domain."""

    def __init__(self, values: np.ndarray, theta: np.ndarray | None = None, residual: float = 0.0,
                 index: int | None = None):
        self.values = values
        self.theta = theta
        self.residual = residual
        self.index = index

    def __call__(self, z):
        return self.values[z]

    @classmethod
    def zero(cls, domain_size: int, dim: int | None = None) -> "Regressor":
        return cls(np.zeros(domain_size), None if dim is None else np.zeros(dim))


def fit_weighted_ls(cls, data: StageDataset, target: str = "optimistic", unc=None) -> Regressor:
    """Weighted least squares over the class.

    Optimistic and pessimistic targets use weights ``1 / sigma_bar^2``; the
    squared (second-moment) target is fitted with unit weights. For a linear
    class the normal equations are solved with the maintained factorization in
    ``unc`` when given; ``Regressor.residual`` records
    ``||A theta - b||_inf / (1 + ||b||_inf)``.
    """
    y = data.targets(target)
    n = len(data)
    if n == 0:
        return Regressor.zero(cls.domain_size, cls.dim if cls.kind == "linear" else None)
    w = np.ones(n) if target == "squared" else 1.0 / data.sigma_bar ** 2
    z = data.z
    if cls.kind == "linear":
        Phi = cls.features.table[z]
        b = Phi.T @ (w * y)
        if unc is not None:
            gram = unc.unit_gram if target == "squared" else unc.gram
        else:
            gram = CholeskyGram(cls.dim, cls.lam_eff)
            gram.A = gram.A + (Phi * w[:, None]).T @ Phi
            gram.refresh()
        gram.check_conditioning()
        theta = gram.solve(b)
        resid = float(np.abs(gram.A @ theta - b).max() / (1.0 + np.abs(b).max()))
        return Regressor(cls.features.table @ theta, theta, resid)
    F = cls.values[:, z]
    losses = ((F - y[None, :]) ** 2 * w[None, :]).sum(axis=1)
    j = int(np.argmin(losses))
    return Regressor(cls.values[j].copy(), index=j)
