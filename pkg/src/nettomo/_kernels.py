"""Hot loops for the E-step: batched iterative proportional fitting.

Each kernel has a compiled (numba) and a vectorised numpy form with identical
arguments; ``ipf_batch`` dispatches on ``_accel.HAVE_NUMBA``.

Row structure is passed in CSR form (``indptr``, ``indices``) over pairs.
Return codes: 0 converged, 1 hit ``max_iter``, 2 infeasible row.
"""
import math

import numpy as np

from . import _accel
from ._accel import njit


@njit(cache=True, nogil=True)
def _ipf_single_nb(x, indptr, indices, y, tol, max_iter):
    m = indptr.shape[0] - 1
    res = np.inf
    for it in range(1, max_iter + 1):
        for r in range(m):
            s = 0.0
            for k in range(indptr[r], indptr[r + 1]):
                s += x[indices[k]]
            if s > 0.0:
                f = y[r] / s
                for k in range(indptr[r], indptr[r + 1]):
                    x[indices[k]] *= f
            elif y[r] > 0.0:
                return 2, it, np.inf
        res = 0.0
        for r in range(m):
            s = 0.0
            for k in range(indptr[r], indptr[r + 1]):
                s += x[indices[k]]
            d = abs(s - y[r])
            if d > res:
                res = d
        if res <= tol:
            return 0, it, res
    return 1, max_iter, res


@njit(cache=True, nogil=True)
def _ipf_batch_nb(x0, indptr, indices, Y, weights, tol, max_iter):
    P = x0.shape[0]
    n = Y.shape[0]
    acc = np.zeros(P)
    x = np.empty(P)
    lgsum = 0.0
    max_res = 0.0
    sweeps = 0
    unconverged = 0
    for t in range(n):
        for p in range(P):
            x[p] = x0[p]
        code, it, res = _ipf_single_nb(x, indptr, indices, Y[t], tol, max_iter)
        if code == 2:
            return acc, lgsum, np.inf, sweeps, unconverged, t
        if code == 1:
            unconverged += 1
        sweeps += it
        if res > max_res:
            max_res = res
        w = weights[t]
        for p in range(P):
            acc[p] += w * x[p]
            lgsum += w * math.lgamma(x[p] + 1.0)
    return acc, lgsum, max_res, sweeps, unconverged, -1


def _ipf_batch_np(x0, indptr, indices, Y, weights, tol, max_iter):
    n, m = Y.shape
    X = np.repeat(x0[None, :], n, axis=0)
    groups = [indices[indptr[r]:indptr[r + 1]] for r in range(m)]
    active = np.ones(n, dtype=bool)
    iters = np.full(n, max_iter, dtype=np.int64)
    res = np.full(n, np.inf)
    for it in range(1, max_iter + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        Xa = X[idx]
        for r, g in enumerate(groups):
            s = Xa[:, g].sum(axis=1)
            y = Y[idx, r]
            bad = (s <= 0) & (y > 0)
            if bad.any():
                return np.zeros_like(x0), 0.0, np.inf, 0, 0, int(idx[np.argmax(bad)])
            f = np.divide(y, s, out=np.ones_like(s), where=s > 0)
            Xa[:, g] *= f[:, None]
        X[idx] = Xa
        r_now = np.zeros(idx.size)
        for r, g in enumerate(groups):
            r_now = np.maximum(r_now, np.abs(Xa[:, g].sum(axis=1) - Y[idx, r]))
        res[idx] = r_now
        done = r_now <= tol
        iters[idx[done]] = it
        active[idx[done]] = False
    from scipy.special import gammaln

    acc = weights @ X
    lgsum = float(weights @ gammaln(X + 1.0).sum(axis=1))
    return acc, lgsum, float(res.max()), int(iters.sum()), int(active.sum()), -1


def ipf_batch(x0, indptr, indices, Y, weights, tol, max_iter, use_numba=None):
    """Project ``x0`` onto ``{x >= 0 : A x = Y[t]}`` for every row ``t``.

    Returns ``(weighted sum of projections, weighted sum of lgamma(x+1),
    max residual, total sweeps, unconverged count, infeasible tick or -1)``.
    """
    if use_numba is None:
        use_numba = _accel.HAVE_NUMBA
    args = (np.ascontiguousarray(x0, dtype=np.float64),
            np.ascontiguousarray(indptr, dtype=np.int64),
            np.ascontiguousarray(indices, dtype=np.int64),
            np.ascontiguousarray(Y, dtype=np.float64),
            np.ascontiguousarray(weights, dtype=np.float64),
            float(tol), int(max_iter))
    if use_numba:
        acc, lg, res, sw, unc, bad = _ipf_batch_nb(*args)
        return acc, float(lg), float(res), int(sw), int(unc), int(bad)
    return _ipf_batch_np(*args)
