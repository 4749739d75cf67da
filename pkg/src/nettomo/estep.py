"""Conditional expectations of latent pair counts given node observations.

Two engines:

* :func:`estep_exact` enumerates every nonnegative integer traffic vector
  consistent with one tick of observations and weights it by the independent
  Poisson prior.  Exact but exponential; meant for small networks and tests.
* :func:`estep_ipf` computes the KL (I-)projection of the current rates onto
  the observation-consistent set by cyclic proportional scaling.  Used as a
  scalable surrogate for the conditional expectation.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from ._kernels import ipf_batch
from .errors import BudgetExceededError, ContractError, InfeasibleObservationError
from .network import ObservationOperator, RateMatrix

RATE_FLOOR = 1e-9
DEFAULT_BUDGET = 200_000


@dataclass
class EStepResult:
    expected_counts: np.ndarray
    method: str
    diagnostics: dict = field(default_factory=dict)


def _rates(rates, n_pairs):
    v = rates.values if isinstance(rates, RateMatrix) else np.asarray(rates, dtype=float)
    if v.shape != (n_pairs,):
        raise ContractError(f"expected {n_pairs} rates, got shape {v.shape}")
    return v


def _as_matrix(op):
    return op.matrix if isinstance(op, ObservationOperator) else np.asarray(op, dtype=np.int64)


def enumerate_feasible(A: np.ndarray, y: np.ndarray, budget: int = DEFAULT_BUDGET) -> np.ndarray:
    """All nonnegative integer ``x`` with ``A x = y`` over the covered pairs.

    Columns of ``A`` that belong to no row are ignored (returned as zeros);
    the caller handles them separately.  Raises if the search visits more than
    ``budget`` nodes.
    """
    A = np.asarray(A, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    m, P = A.shape
    covered = A.any(axis=0)
    order = [p for p in range(P) if covered[p]]
    ub = {p: int(min(y[r] for r in range(m) if A[r, p])) for p in order}
    # for each row, the number of its pairs still unassigned after position k
    rows_of = {p: np.nonzero(A[:, p])[0] for p in order}
    remaining_cap = np.zeros((len(order) + 1, m), dtype=np.int64)
    for k in range(len(order) - 1, -1, -1):
        remaining_cap[k] = remaining_cap[k + 1]
        p = order[k]
        remaining_cap[k, rows_of[p]] += ub[p]

    out = []
    x = np.zeros(P, dtype=np.int64)
    rem = y.copy()
    visited = 0

    def dfs(k):
        nonlocal visited
        visited += 1
        if visited > budget:
            raise BudgetExceededError(f"enumeration exceeded budget of {budget} nodes")
        if k == len(order):
            if not rem.any():
                out.append(x.copy())
            return
        p = order[k]
        rs = rows_of[p]
        hi = min(ub[p], int(rem[rs].min()))
        for v in range(hi + 1):
            x[p] = v
            rem[rs] -= v
            # rows must still be reachable by the pairs left to assign
            if np.all(rem <= remaining_cap[k + 1]):
                dfs(k + 1)
            rem[rs] += v
        x[p] = 0

    if np.any(y < 0):
        return np.zeros((0, P), dtype=np.int64)
    if np.any(y[~A.any(axis=1)] != 0):
        return np.zeros((0, P), dtype=np.int64)
    dfs(0)
    return np.array(out, dtype=np.int64).reshape(len(out), P)


class ExactEnumerator:
    """Caches feasible sets per distinct observation vector.

    The feasible set depends only on ``y``, so repeated E-steps with new rates
    reuse the enumeration.
    """

    def __init__(self, A: np.ndarray, budget: int = DEFAULT_BUDGET):
        self.A = np.asarray(A, dtype=np.int64)
        self.budget = budget
        self.covered = self.A.any(axis=0)
        self._cache: dict[bytes, np.ndarray] = {}

    def feasible(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.int64)
        key = y.tobytes()
        if key not in self._cache:
            self._cache[key] = enumerate_feasible(self.A, y, self.budget)
        return self._cache[key]

    def expectation(self, rates: np.ndarray, y) -> tuple[np.ndarray, float]:
        """``E[x | A x = y]`` and ``log P(A x = y)`` under independent Poisson(rates)."""
        X = self.feasible(y)
        if X.shape[0] == 0:
            raise InfeasibleObservationError(f"no nonnegative integer traffic reproduces y={y.tolist()}")
        lam = np.asarray(rates, dtype=float)
        cov = self.covered
        # xlogy gives 0 * log(0) = 0 for pairs with zero rate and zero count
        terms = xlogy(X[:, cov], lam[cov]) - gammaln(X[:, cov] + 1.0)
        logw = terms.sum(axis=1)
        if not np.isfinite(logw).any():
            raise InfeasibleObservationError("observations have zero probability under current rates")
        lz = logsumexp(logw)
        w = np.exp(logw - lz)
        ex = w @ X.astype(float)
        ex[~cov] = lam[~cov]
        loglik = float(lz - lam[cov].sum())
        return ex, loglik


def estep_exact(op, rates, y_t, budget: int = DEFAULT_BUDGET, enumerator: ExactEnumerator | None = None) -> EStepResult:
    """Exact conditional expectation of pair counts for one tick.

    Pairs that appear in no observation row are independent of the data and
    keep their prior mean.
    """
    A = _as_matrix(op)
    lam = _rates(rates, A.shape[1])
    y = np.asarray(y_t)
    if y.shape != (A.shape[0],):
        raise ContractError("observation vector length does not match operator rows")
    if np.any(np.asarray(y) != np.round(y)):
        raise ContractError("exact E-step needs integer observations")
    enum = enumerator or ExactEnumerator(A, budget)
    ex, loglik = enum.expectation(lam, np.round(y).astype(np.int64))
    return EStepResult(ex, "exact", {"n_feasible": int(enum.feasible(y).shape[0]), "loglik": loglik})


def ipf_objective(x, mu_dot_y):
    return float(x.sum() - mu_dot_y)


def estep_ipf(op, rates, y_bar, tol: float = 1e-8, max_iter: int = 500, floor: float = RATE_FLOOR) -> EStepResult:
    """KL projection of ``rates`` onto ``{x >= 0 : A x = y_bar}``.

    The diagnostics carry ``objective``: per sweep, ``sum(x) - mu . y`` with
    ``mu`` the accumulated log scaling factors.  It equals the distance
    ``KL(x* || x_k)`` up to a constant, so it never increases.
    """
    A = _as_matrix(op)
    m, P = A.shape
    lam = np.maximum(_rates(rates, P), floor)
    y = np.asarray(y_bar, dtype=float)
    if y.shape != (m,):
        raise ContractError("observation vector length does not match operator rows")
    if np.any(y < 0):
        raise ContractError("observations must be nonnegative")
    groups = [np.nonzero(A[r])[0] for r in range(m)]
    for r, g in enumerate(groups):
        if g.size == 0 and y[r] > 0:
            raise InfeasibleObservationError(f"row {r} observes {y[r]} but covers no pairs")

    x = lam.copy()
    mu = np.zeros(m)
    trace = []
    res = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        for r, g in enumerate(groups):
            s = x[g].sum()
            if s > 0:
                f = y[r] / s
                x[g] *= f
                if f > 0:
                    mu[r] += np.log(f)
            elif y[r] > 0:
                raise InfeasibleObservationError(f"row {r} observes {y[r]} but all its pairs were forced to zero")
        mu_y = float(np.dot(np.where(y > 0, mu, 0.0), y))
        trace.append(ipf_objective(x, mu_y))
        res = float(np.max(np.abs(A @ x - y))) if m else 0.0
        if res <= tol:
            break
    converged = res <= tol
    if not converged:
        warnings.warn(f"estep_ipf did not converge in {max_iter} sweeps (residual {res:.3g})", RuntimeWarning, stacklevel=2)
    return EStepResult(x, "ipf", {"iterations": it, "residual": res, "converged": converged, "objective": trace})


def estep_ipf_series(op: ObservationOperator, rates, Y, tol: float = 1e-8, max_iter: int = 500,
                     floor: float = RATE_FLOOR, use_numba=None) -> EStepResult:
    """Per-tick KL projections of ``rates``, summed over ticks into ``S``.

    Identical observation vectors are projected once and weighted.
    """
    A = _as_matrix(op)
    lam = np.maximum(_rates(rates, A.shape[1]), floor)
    Y = np.asarray(Y)
    uniq, counts = np.unique(Y, axis=0, return_counts=True)
    indptr = np.concatenate(([0], np.cumsum(A.sum(axis=1)))).astype(np.int64)
    indices = np.nonzero(A)[1].astype(np.int64)
    S, lg, res, sweeps, unconv, bad = ipf_batch(lam, indptr, indices, uniq, counts, tol, max_iter, use_numba)
    if bad >= 0:
        raise InfeasibleObservationError(f"observation vector {uniq[bad].tolist()} is unreachable from the current rates")
    return EStepResult(S, "ipf", {"residual": res, "sweeps": sweeps, "unconverged": unconv,
                                   "sum_lgamma": lg, "n_unique": int(uniq.shape[0])})


def estep_exact_series(enum: ExactEnumerator, rates, Y) -> EStepResult:
    """Sum of exact per-tick expectations; also returns the observed-data log-likelihood."""
    Y = np.asarray(Y, dtype=np.int64)
    uniq, counts = np.unique(Y, axis=0, return_counts=True)
    S = np.zeros(enum.A.shape[1])
    loglik = 0.0
    for y, c in zip(uniq, counts):
        ex, ll = enum.expectation(rates, y)
        S += c * ex
        loglik += c * ll
    return EStepResult(S, "exact", {"loglik": loglik, "n_unique": int(uniq.shape[0])})
