"""E-step engines against brute-force oracles.

The exact engine is checked against a rational-arithmetic sum over the whole
truncated count box, independent of the enumerator's pruning.
"""
import itertools
from fractions import Fraction
from math import factorial

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import poisson

from nettomo._kernels import ipf_batch
from nettomo.errors import BudgetExceededError, ContractError, InfeasibleObservationError
from nettomo.estep import (ExactEnumerator, enumerate_feasible, estep_exact, estep_exact_series, estep_ipf,
                           estep_ipf_series)
from nettomo.network import ObservationScheme, Topology, build_operator

from conftest import small_topologies


def brute_force_expectation(A, y, rates):
    """E[x | A x = y] for independent Poisson(rates), exactly in rationals.

    Every pair is bounded by the smallest observation covering it, so the box
    ``prod(0..bound)`` contains the whole fiber.
    """
    A = np.asarray(A)
    m, P = A.shape
    bounds = [min([int(y[r]) for r in range(m) if A[r, p]], default=0) for p in range(P)]
    num = [Fraction(0)] * P
    den = Fraction(0)
    for x in itertools.product(*[range(b + 1) for b in bounds]):
        if any(sum(A[r, p] * x[p] for p in range(P)) != y[r] for r in range(m)):
            continue
        w = Fraction(1)
        for p in range(P):
            w *= rates[p] ** x[p] / factorial(x[p])
        den += w
        for p in range(P):
            num[p] += x[p] * w
    return [n / den for n in num]


def test_two_by_two_example(two_by_two):
    topo, op, y = two_by_two
    res = estep_exact(op, np.ones(4), y)
    assert np.allclose(res.expected_counts, [2 / 3, 4 / 3, 1 / 3, 2 / 3], atol=1e-12)
    oracle = brute_force_expectation(op.matrix, y, [Fraction(1)] * 4)
    assert oracle == [Fraction(2, 3), Fraction(4, 3), Fraction(1, 3), Fraction(2, 3)]


def test_single_row_is_multinomial_split():
    A = np.ones((1, 3), dtype=np.int64)
    res = estep_exact(A, np.array([1.0, 2.0, 3.0]), np.array([6]))
    assert np.allclose(res.expected_counts, [1.0, 2.0, 3.0], atol=1e-12)


@pytest.mark.parametrize("topo", small_topologies(), ids=lambda t: f"n{t.n_exterior}u{t.n_interior}")
def test_exact_matches_rational_oracle(topo):
    op = build_operator(topo, ObservationScheme.nodes_only(topo))
    rng = np.random.default_rng(topo.n_pairs + 10 * topo.n_interior)
    for _ in range(4):
        rates_q = [Fraction(int(k), 4) for k in rng.integers(1, 9, size=topo.n_pairs)]
        x = rng.poisson(1.5, size=topo.n_pairs)
        y = op.matrix @ x
        got = estep_exact(op, np.array([float(r) for r in rates_q]), y).expected_counts
        want = brute_force_expectation(op.matrix, y, rates_q)
        assert np.max(np.abs(got - np.array([float(w) for w in want]))) <= 1e-12


def test_uncovered_pairs_keep_prior_mean():
    A = np.array([[1, 1, 0]])
    res = estep_exact(A, np.array([1.0, 1.0, 2.5]), np.array([2]))
    assert res.expected_counts[2] == 2.5
    assert np.allclose(res.expected_counts[:2], [1.0, 1.0])


def test_zero_rate_pairs_get_zero_mass():
    A = np.array([[1, 1]])
    res = estep_exact(A, np.array([0.0, 1.0]), np.array([3]))
    assert np.allclose(res.expected_counts, [0.0, 3.0])


def test_exact_errors():
    A = np.array([[1, 1], [1, 1]])
    with pytest.raises(InfeasibleObservationError):
        estep_exact(A, np.ones(2), np.array([1, 2]))
    with pytest.raises(ContractError):
        estep_exact(A, np.ones(2), np.array([1.5, 1.5]))
    with pytest.raises(BudgetExceededError):
        enumerate_feasible(np.ones((1, 6), dtype=np.int64), np.array([40]), budget=100)


def test_exact_series_loglik_matches_direct_sum():
    # P(x1 + x2 = y) is Poisson(l1 + l2)
    A = np.array([[1, 1]])
    enum = ExactEnumerator(A)
    Y = np.array([[0], [3], [3], [1]])
    lam = np.array([0.4, 1.1])
    res = estep_exact_series(enum, lam, Y)
    assert res.diagnostics["loglik"] == pytest.approx(poisson.logpmf(Y[:, 0], lam.sum()).sum(), abs=1e-12)
    assert np.allclose(res.expected_counts, Y.sum() * lam / lam.sum())


# ---------------------------------------------------------------- IPF

def _random_instance(seed):
    """Margins of a strictly positive table, so a positive feasible point exists.

    Without one IPF still converges, but only sublinearly.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 7))
    topo = Topology.create(n)
    observed = [p for p in topo.pairs if rng.random() < 0.2]
    op = build_operator(topo, ObservationScheme.nodes_only(topo, observed))
    x_true = rng.gamma(1.5, 1.0, size=topo.n_pairs) + 0.05
    y = op.matrix @ x_true
    lam = rng.gamma(1.0, 1.0, size=topo.n_pairs) + 1e-3
    return op, lam, y


@pytest.mark.parametrize("seed", range(100))
def test_ipf_residual_and_monotone_objective(seed):
    op, lam, y = _random_instance(seed)
    res = estep_ipf(op, lam, y, tol=1e-8, max_iter=5000)
    assert res.diagnostics["residual"] <= 1e-8
    obj = np.array(res.diagnostics["objective"])
    assert np.all(np.diff(obj) <= 1e-9 * np.maximum(1.0, np.abs(obj[:-1])))


def test_ipf_is_kl_projection_on_two_by_two(two_by_two):
    # for a 2x2 table the projection of the all-ones table has the product form
    topo, op, y = two_by_two
    x = estep_ipf(op, np.ones(4), y).expected_counts
    assert np.allclose(x, [2 * 1 / 3, 2 * 2 / 3, 1 * 1 / 3, 1 * 2 / 3], atol=1e-9)


def test_ipf_infeasible_row():
    A = np.array([[1, 0], [0, 0]])
    with pytest.raises(InfeasibleObservationError):
        estep_ipf(A, np.ones(2), np.array([1.0, 1.0]))


@given(st.integers(0, 10_000))
def test_ipf_backends_agree(seed):
    op, lam, _ = _random_instance(seed)
    rng = np.random.default_rng(seed)
    Y = np.array([op.matrix @ rng.poisson(lam) for _ in range(8)], dtype=float)
    indptr, indices = op.csr()
    w = np.ones(len(Y))
    a = ipf_batch(lam, indptr, indices, Y, w, 1e-10, 2000, use_numba=True)
    b = ipf_batch(lam, indptr, indices, Y, w, 1e-10, 2000, use_numba=False)
    assert np.allclose(a[0], b[0], rtol=0, atol=1e-8)
    assert a[1] == pytest.approx(b[1], abs=1e-8)
    assert a[5] == b[5]


def test_ipf_series_dedups_and_sums():
    op, lam, _ = _random_instance(3)
    rng = np.random.default_rng(0)
    y1 = op.matrix @ rng.poisson(lam)
    y2 = op.matrix @ rng.poisson(lam)
    Y = np.array([y1, y2, y1])
    res = estep_ipf_series(op, lam, Y, tol=1e-10, max_iter=5000)
    single = [estep_ipf(op, lam, y, tol=1e-10, max_iter=5000).expected_counts for y in (y1, y2)]
    assert res.diagnostics["n_unique"] == 2
    assert np.allclose(res.expected_counts, 2 * single[0] + single[1], atol=1e-7)


def test_ipf_series_infeasible_tick():
    A = np.array([[1, 1, 0], [0, 0, 1]])
    with pytest.raises(InfeasibleObservationError):
        estep_ipf_series(A, np.array([1.0, 1.0, 0.0]), np.array([[1, 0], [2, 3]]), floor=0.0)
