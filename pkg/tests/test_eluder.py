import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mqlucb.eluder import (DimReport, check_dimension_bound, eluder_dim_bruteforce, generalized_dim,
                           dimension_bound_rhs)
from mqlucb.funcclass import FeatureMap, FiniteClass, LinearClass


def naive_eluder(values, eps):
    """Exhaustive search over all repetition-free orderings, no memoization.

    Independent implementation: tries every candidate eps' and every
    permutation prefix explicitly.
    """
    V = np.asarray(values, dtype=float)
    m, n = V.shape
    gaps = sorted({abs(V[i, z] - V[j, z]) for i in range(m) for j in range(m) for z in range(n)})
    cands = [g - 1e-9 for g in gaps if g > eps]
    best = 0
    for e in cands:
        for perm in itertools.permutations(range(n)):
            length = 0
            for t, z in enumerate(perm):
                prefix = perm[:t]
                indep = any(
                    math.sqrt(sum((V[i, p] - V[j, p]) ** 2 for p in prefix)) <= e and abs(V[i, z] - V[j, z]) > e
                    for i in range(m) for j in range(i + 1, m))
                if not indep:
                    break
                length += 1
            best = max(best, length)
    return best


# --- generalized_dim --------------------------------------------------------

def test_one_dim_all_ones_stream():
    cls = LinearClass(FeatureMap(np.ones((1, 1)), 1))
    assert generalized_dim(cls, [0, 0, 0], [1, 1, 1], 1.0) == pytest.approx(11 / 6, abs=1e-15)


def test_empty_stream():
    cls = LinearClass(FeatureMap(np.ones((1, 1)), 1))
    assert generalized_dim(cls, [], [], 1.0) == 0.0


def test_mismatched_lengths():
    cls = LinearClass(FeatureMap(np.ones((1, 1)), 1))
    with pytest.raises(ValueError):
        generalized_dim(cls, [0, 0], [1.0], 1.0)


def test_weight_floor_enforced():
    cls = LinearClass(FeatureMap(np.ones((1, 1)), 1))
    with pytest.raises(ValueError):
        generalized_dim(cls, [0], [0.01], 1.0, alpha=0.1)


@pytest.mark.parametrize("d", [1, 3, 8])
def test_one_hot_single_pass(d):
    # each point is new, so D^2 = |phi|^2 / lam_eff = 1 against the strict prefix
    cls = LinearClass(FeatureMap(np.eye(d), 1))
    assert generalized_dim(cls, list(range(d)), np.ones(d), 1.0) == pytest.approx(d)
    # a second pass sees D^2 = 1/2 per point
    assert generalized_dim(cls, list(range(d)) * 2, np.ones(2 * d), 1.0) == pytest.approx(1.5 * d)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), d=st.integers(1, 6), T=st.integers(1, 80))
def test_doubling_sigma_never_increases(seed, d, T):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(T, d))
    X /= np.maximum(1, np.linalg.norm(X, axis=1, keepdims=True))
    sig = rng.uniform(0.1, 2, T)
    cls = LinearClass(FeatureMap(np.ones((1, d)) / math.sqrt(d), 1))
    a = generalized_dim(cls, X, sig, 1.0)
    b = generalized_dim(cls, X, 2 * sig, 1.0)
    assert b <= a + 1e-12


def test_huge_sigma_repeat_adds_almost_nothing():
    rng = np.random.default_rng(0)
    vals = rng.uniform(0, 1, size=(6, 5))
    cls = FiniteClass(vals)
    Z = [0, 1, 2, 3]
    sig = [1.0] * 4
    base = generalized_dim(cls, Z, sig, 1.0)
    extra = generalized_dim(cls, Z + [2], sig + [1e6], 1.0)
    assert 0 <= extra - base <= 1e-10


def test_random_linear_streams_potential_bound():
    rng = np.random.default_rng(1)
    for _ in range(10):
        d = int(rng.integers(1, 9))
        T = int(rng.integers(1, 2001))
        alpha = float(rng.uniform(0.05, 1))
        X = rng.normal(size=(T, d))
        X /= np.maximum(1, np.linalg.norm(X, axis=1, keepdims=True))
        sig = alpha * rng.uniform(1, 3, T)
        cls = LinearClass(FeatureMap(np.ones((1, d)) / math.sqrt(d), 1))
        lhs = generalized_dim(cls, X, sig, 1.0, alpha=alpha)
        assert lhs <= 2 * d * math.log(1 + T / (d * cls.lam_eff * alpha**2))


# --- eluder_dim_bruteforce ---------------------------------------------------

def test_fixture_dimension_one():
    assert eluder_dim_bruteforce([[0, 0], [1, 0]], 0.5) == 1


def test_singleton_class():
    assert eluder_dim_bruteforce([[0.3, 0.7, 0.1]], 0.5) == 0


def test_four_indicators_dimension_three():
    # the last point is forced once three indicator pairs are pinned
    assert eluder_dim_bruteforce(np.eye(4), 0.5) == 3


def test_fixture_dimension_four():
    vals = np.vstack([np.eye(4), np.zeros(4)])
    assert eluder_dim_bruteforce(vals, 0.5) == 4


def test_eps_above_all_gaps():
    assert eluder_dim_bruteforce(np.eye(3), 1.0) == 0


def test_size_limits():
    with pytest.raises(ValueError):
        eluder_dim_bruteforce(np.zeros((2, 13)), 0.1)
    with pytest.raises(ValueError):
        eluder_dim_bruteforce(np.zeros((65, 2)), 0.1)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(1, 5), n=st.integers(1, 5),
       eps=st.sampled_from([0.1, 0.3, 0.5, 0.8]))
def test_matches_naive_search(seed, m, n, eps):
    vals = np.random.default_rng(seed).integers(0, 5, size=(m, n)) / 4
    assert eluder_dim_bruteforce(vals, eps) == naive_eluder(vals, eps)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), m=st.integers(2, 10), n=st.integers(1, 8))
def test_permutation_invariant(seed, m, n):
    rng = np.random.default_rng(seed)
    vals = rng.integers(0, 5, size=(m, n)) / 4
    base = eluder_dim_bruteforce(vals, 0.3)
    assert eluder_dim_bruteforce(vals[:, rng.permutation(n)], 0.3) == base
    assert eluder_dim_bruteforce(vals[rng.permutation(m)], 0.3) == base
    assert 0 <= base <= n


# --- dimension bound harness ---------------------------------------------------

def test_single_term_lhs():
    cls = FiniteClass(np.eye(3))
    r = check_dimension_bound(cls, [1], [0.5])
    assert r.T == 1 and r.generalized_dim <= 1


def test_equal_weights_floor_term():
    cls = FiniteClass(np.eye(3), lam=2.0)
    r = check_dimension_bound(cls, [0, 1, 2, 0], [0.7] * 4)
    assert r.alpha == r.M == 0.7
    assert r.rhs == pytest.approx(1 / 2.0)


def test_random_instances_calibrated_constant():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        nz, nf = int(rng.integers(2, 11)), int(rng.integers(2, 33))
        cls = FiniteClass(rng.integers(0, 5, size=(nf, nz)) / 4)
        T = int(rng.integers(2, 60))
        r = check_dimension_bound(cls, rng.integers(0, nz, T), rng.uniform(0.1, 1.0, T), alpha=0.1, M=1.0)
        assert not r.violated
        assert r.generalized_dim <= 10 * r.rhs


def test_report_round_trip():
    cls = FiniteClass(np.eye(3))
    r = check_dimension_bound(cls, [0, 1, 2], [0.5, 0.6, 1.0])
    d = json.loads(r.to_json())
    assert d["schema"] == "dimreport/v1"
    assert DimReport.from_dict(d) == r
    assert r.rhs == pytest.approx(dimension_bound_rhs(r.eluder_dim, 3, 1.0, 1.0, 0.5))
    with pytest.raises(ValueError):
        DimReport.from_dict({**d, "schema": "x"})
