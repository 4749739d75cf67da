"""Dense primal-dual interior-point solver for standard-form linear programs.

    minimise    c @ x
    subject to  A_eq @ x = b_eq,  x >= 0

Mehrotra predictor-corrector on the normal equations, with a phase-1 problem
to certify infeasibility and a recession-direction problem to certify
unboundedness.  On degenerate problems the returned point is whatever the
central path converges to (typically the centre of the optimal face), so only
the objective value is unique.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ContractError
from .network import ObservationOperator, RateMatrix

PIVOT_TOL = 1e-10


@dataclass(frozen=True)
class LinearProgram:
    c: np.ndarray
    A_eq: np.ndarray
    b_eq: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        A = np.atleast_2d(np.asarray(self.A_eq, dtype=float))
        b = np.asarray(self.b_eq, dtype=float)
        if c.ndim != 1 or A.shape != (b.shape[0], c.shape[0]):
            raise ContractError(f"inconsistent LP dimensions: c {c.shape}, A {A.shape}, b {b.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(c))):
            raise ContractError("LP data must be finite")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A_eq", A)
        object.__setattr__(self, "b_eq", b)

    @property
    def n(self) -> int:
        return self.c.shape[0]


@dataclass
class LPResult:
    x: np.ndarray
    objective: float
    status: str
    iterations: int = 0
    residuals: dict = field(default_factory=dict)
    y: np.ndarray | None = None
    s: np.ndarray | None = None


def independent_rows(A: np.ndarray, b: np.ndarray, tol: float = PIVOT_TOL):
    """Drop linearly dependent rows by pivoted QR.

    Returns ``(kept row indices, consistent)``; ``consistent`` is False when a
    dropped row's right-hand side disagrees with the combination of kept rows.
    """
    m = A.shape[0]
    if m == 0:
        return np.arange(0), True
    _, R, piv = sla.qr(A.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return np.arange(0), not np.any(np.abs(b) > tol)
    rank = int(np.sum(d > tol * d[0]))
    keep = np.sort(piv[:rank])
    drop = np.sort(piv[rank:])
    if drop.size == 0:
        return keep, True
    coef, *_ = sla.lstsq(A[keep].T, A[drop].T)
    scale = max(1.0, float(np.abs(b).max()))
    consistent = bool(np.all(np.abs(coef.T @ b[keep] - b[drop]) <= 1e-8 * scale))
    return keep, consistent


def _solve_normal(A, d, rhs):
    M = (A * d) @ A.T
    try:
        cf = sla.cho_factor(M, check_finite=False)
        return sla.cho_solve(cf, rhs, check_finite=False)
    except (sla.LinAlgError, ValueError):
        return sla.lstsq(M, rhs, check_finite=False)[0]


def _step(v, dv):
    neg = dv < 0
    if not neg.any():
        return 1.0
    return float(min(1.0, np.min(-v[neg] / dv[neg])))


def _start(A, b, c):
    m, n = A.shape
    if m:
        AAt = A @ A.T
        x = A.T @ sla.solve(AAt, b, assume_a="pos")
        y = sla.solve(AAt, A @ c, assume_a="pos")
    else:
        x, y = np.zeros(n), np.zeros(0)
    s = c - A.T @ y
    x = x + max(-1.5 * x.min(), 0.0)
    s = s + max(-1.5 * s.min(), 0.0)
    xs = x @ s
    x = x + 0.5 * xs / s.sum() if s.sum() > 0 else x + 1.0
    s = s + 0.5 * xs / x.sum() if x.sum() > 0 else s + 1.0
    x = np.maximum(x, 1e-8)
    s = np.maximum(s, 1e-8)
    return x, y, s


def _mehrotra(A, b, c, tol, max_iter, blowup=1e12):
    m, n = A.shape
    x, y, s = _start(A, b, c)
    status = "maxiter"
    it = 0
    for it in range(1, max_iter + 1):
        rb = A @ x - b
        rc = A.T @ y + s - c
        mu = x @ s / n
        if max(np.abs(rb).max(initial=0.0), np.abs(rc).max(initial=0.0), mu) <= tol:
            status = "optimal"
            it -= 1
            break
        if np.abs(x).max() > blowup or np.abs(y).max(initial=0.0) > blowup:
            status = "diverged"
            break
        d = x / s

        def direction(rxs):
            rhs = -rb + A @ (rxs / s) - A @ (d * rc)
            dy = _solve_normal(A, d, rhs) if m else np.zeros(0)
            ds = -rc - A.T @ dy
            dx = -rxs / s - d * ds
            return dx, dy, ds

        dx_a, dy_a, ds_a = direction(x * s)
        ap, ad = _step(x, dx_a), _step(s, ds_a)
        mu_aff = (x + ap * dx_a) @ (s + ad * ds_a) / n
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dx, dy, ds = direction(x * s + dx_a * ds_a - sigma * mu)
        eta = max(0.9, 1.0 - 10 * mu)
        ap = min(1.0, eta * _step(x, dx))
        ad = min(1.0, eta * _step(s, ds))
        x = x + ap * dx
        y = y + ad * dy
        s = s + ad * ds
        x = np.maximum(x, 1e-300)
        s = np.maximum(s, 1e-300)
    else:
        rb = A @ x - b
        rc = A.T @ y + s - c
        mu = x @ s / n
        if max(np.abs(rb).max(initial=0.0), np.abs(rc).max(initial=0.0), mu) <= tol:
            status = "optimal"
    return x, y, s, status, it


def lp_solve(lp: LinearProgram, tol: float = 1e-8, max_iter: int = 200) -> LPResult:
    A, b, c = lp.A_eq, lp.b_eq, lp.c
    n = lp.n
    keep, consistent = independent_rows(A, b)
    if not consistent:
        return LPResult(np.full(n, np.nan), np.nan, "infeasible", 0, {"reason": "inconsistent dependent rows"})
    Ak, bk = A[keep], b[keep]
    m = Ak.shape[0]

    # phase 1: min sum(a) s.t. Ak x + D a = bk, with D flipping rows so a >= 0 starts feasible
    sgn = np.where(bk < 0, -1.0, 1.0)
    A1 = np.hstack([Ak, np.diag(sgn)])
    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    phase1 = None
    if m:
        x1, _, _, _, it1 = _mehrotra(A1, bk, c1, tol * 1e-2, max_iter)
        phase1 = float(x1[n:].sum())
        if phase1 > tol * max(1.0, np.abs(bk).max()):
            return LPResult(np.full(n, np.nan), np.nan, "infeasible", it1, {"phase1": phase1})

    x, y, s, status, it = _mehrotra(Ak, bk, c, tol, max_iter)
    if status != "optimal":
        if _has_descent_ray(Ak, c, tol, max_iter):
            return LPResult(x, -np.inf, "unbounded", it, {"phase1": phase1})
        if status == "diverged":
            status = "maxiter"
    residuals = {
        "primal": float(np.abs(A @ x - b).max(initial=0.0)),
        "dual": float(np.abs(Ak.T @ y + s - c).max(initial=0.0)),
        "complementarity": float(x @ s / n),
        "max_complementarity": float(np.max(x * s)),
        "phase1": phase1,
        "dropped_rows": int(A.shape[0] - m),
    }
    return LPResult(x, float(c @ x), status, it, residuals, y, s)


def _has_descent_ray(A, c, tol, max_iter) -> bool:
    """Is there ``d >= 0`` with ``A d = 0``, ``sum(d) = 1`` and ``c @ d < 0``?"""
    m, n = A.shape
    A2 = np.vstack([A, np.ones((1, n))])
    b2 = np.concatenate([np.zeros(m), [1.0]])
    keep, _ = independent_rows(A2, b2)
    x, _, _, st, _ = _mehrotra(A2[keep], b2[keep], c, tol, max_iter)
    return st == "optimal" and c @ x < -tol * max(1.0, np.abs(c).max())


def build_l1_projection_lp(baseline: RateMatrix | np.ndarray, op: ObservationOperator | np.ndarray, y_bar) -> LinearProgram:
    """Split-form LP for ``argmin ||lam - baseline||_1`` s.t. ``A lam = y_bar``, ``lam >= 0``.

    Variables are stacked as ``(lam, p, n)`` with ``lam - p + n = baseline``.
    """
    lam0 = baseline.values if isinstance(baseline, RateMatrix) else np.asarray(baseline, dtype=float)
    A = op.matrix if isinstance(op, ObservationOperator) else np.asarray(op)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    P = lam0.shape[0]
    if A.shape[1] != P:
        raise ContractError("operator columns do not match baseline length")
    y = np.asarray(y_bar, dtype=float)
    if y.shape != (A.shape[0],):
        raise ContractError("y_bar length does not match operator rows")
    I = np.eye(P)
    Z = np.zeros_like(A)
    A_eq = np.block([[I, -I, I], [A, Z, Z]])
    b_eq = np.concatenate([lam0, y])
    c = np.concatenate([np.zeros(P), np.ones(P), np.ones(P)])
    return LinearProgram(c, A_eq, b_eq)


def split_l1_solution(x: np.ndarray, n_pairs: int) -> np.ndarray:
    return np.maximum(x[:n_pairs], 0.0)
