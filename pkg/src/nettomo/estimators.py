"""Rate estimators for partially observed Poisson networks.

Gamma prior convention used throughout: for pair ``p`` with baseline rate
``b`` and belief ``eps``, ``rate ~ Gamma(shape = 1 + eps * b, rate = eps)``.
Its mode is exactly ``b``; its variance grows without bound as ``eps -> 0``
and vanishes as ``eps -> inf``.  With ``S`` total expected messages over ``T``
ticks the posterior mode is ``(S + eps * b) / (T + eps)``.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import digamma, gammaln, xlogy

from .errors import BudgetExceededError, ConfigurationError, ContractError, EstimationError
from .estep import RATE_FLOOR, ExactEnumerator, estep_exact_series, estep_ipf_series
from .lp import build_l1_projection_lp, lp_solve, split_l1_solution
from .network import ObservationOperator, ObservationSeries, RateMatrix, TrafficSeries, _check_keys
from .simulate import Streams

INIT_MODES = ("random", "baseline", "mre")
ESTEP_MODES = ("ipf", "exact", "auto")
POOLING_MODES = ("pooled", "per_tick")
ESTIMATORS = ("oracle", "poisson_mle", "hipois", "mre", "mre_hipois")


@dataclass(frozen=True)
class EstimatorSettings:
    em_tol: float = 1e-5
    em_max_iter: int = 2000
    n_restarts: int = 5
    init_mode: str = "random"
    epsilon_bounds: tuple[float, float] = (1e-6, 1e4)
    seed: int = 0
    estep: str = "ipf"
    pooling: str = "per_tick"
    ipf_tol: float = 1e-8
    ipf_max_iter: int = 500
    exact_budget: int = 200_000
    lp_tol: float = 1e-8
    lp_max_iter: int = 200
    shared_epsilon: bool = False
    fixed_epsilon: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "epsilon_bounds", tuple(float(e) for e in self.epsilon_bounds))
        lo, hi = self.epsilon_bounds
        if self.em_tol <= 0:
            raise ConfigurationError("em_tol must be positive")
        if self.em_max_iter < 1 or self.n_restarts < 1:
            raise ConfigurationError("em_max_iter and n_restarts must be >= 1")
        if not (0 < lo <= hi < np.inf):
            raise ConfigurationError(f"epsilon_bounds must satisfy 0 < min <= max < inf, got {self.epsilon_bounds}")
        if self.init_mode not in INIT_MODES:
            raise ConfigurationError(f"init_mode must be one of {INIT_MODES}")
        if self.estep not in ESTEP_MODES:
            raise ConfigurationError(f"estep must be one of {ESTEP_MODES}")
        if self.pooling not in POOLING_MODES:
            raise ConfigurationError(f"pooling must be one of {POOLING_MODES}")
        if self.fixed_epsilon is not None and self.fixed_epsilon <= 0:
            raise ConfigurationError("fixed_epsilon must be positive")

    def replace(self, **kw) -> "EstimatorSettings":
        d = asdict(self)
        d.update(kw)
        return EstimatorSettings(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epsilon_bounds"] = list(self.epsilon_bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorSettings":
        _check_keys(d, set(cls.__dataclass_fields__), "estimators")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class EstimateReport:
    estimator: str
    lambda_hat: RateMatrix
    iterations: int = 0
    objective_trace: list = field(default_factory=list)
    epsilon_hat: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "pairs": [list(p) for p in self.lambda_hat.topology.pairs],
            "lambda_hat": self.lambda_hat.values.tolist(),
            "epsilon_hat": None if self.epsilon_hat is None else np.asarray(self.epsilon_hat).tolist(),
            "iterations": int(self.iterations),
            "objective_trace": [float(v) for v in self.objective_trace],
            "extra": _jsonable(self.extra),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


# -- prior pieces -----------------------------------------------------------

def gamma_log_prior(lam, baseline, eps):
    """Log density of ``Gamma(1 + eps*b, eps)`` at ``lam``, elementwise."""
    lam = np.asarray(lam, dtype=float)
    shape = 1.0 + eps * baseline
    return shape * np.log(eps) - gammaln(shape) + xlogy(shape - 1.0, lam) - eps * lam


def _eps_score(eps, lam, baseline):
    # d/d eps of gamma_log_prior; strictly decreasing in eps
    with np.errstate(divide="ignore"):
        loglam = np.log(lam)
    term = np.where(baseline > 0, baseline * loglam, 0.0)
    return 1.0 / eps + baseline * np.log(eps) + baseline - baseline * digamma(1.0 + eps * baseline) + term - lam


def optimize_epsilon(lam, baseline, bounds, shared=False, n_bisect=80):
    """Maximise the gamma log prior of ``lam`` over ``eps`` in ``bounds``.

    The objective is strictly concave in ``eps``, so bisection on the score in
    log-space brackets the maximiser; values outside the bracket are pinned to
    the nearest bound.
    """
    lam = np.asarray(lam, dtype=float)
    baseline = np.asarray(baseline, dtype=float)
    lo, hi = np.log(bounds[0]), np.log(bounds[1])

    def score(le):
        s = _eps_score(np.exp(le), lam, baseline)
        return s.sum(keepdims=True) if shared else s

    n = 1 if shared else lam.shape[0]
    a = np.full(n, lo)
    b = np.full(n, hi)
    with np.errstate(invalid="ignore", divide="ignore"):
        s_lo = score(a)
        s_hi = score(b)
        for _ in range(n_bisect):
            mid = 0.5 * (a + b)
            pos = score(mid) > 0
            a = np.where(pos, mid, a)
            b = np.where(pos, b, mid)
    eps = np.exp(0.5 * (a + b))
    eps = np.where(s_lo <= 0, bounds[0], eps)
    eps = np.where(s_hi >= 0, bounds[1], eps)
    failed = np.isnan(s_lo) | np.isnan(s_hi)
    if failed.any():
        warnings.warn(f"epsilon search failed for {int(failed.sum())} pair(s); pinned to {bounds[0]:g}",
                      RuntimeWarning, stacklevel=2)
    eps = np.where(failed, bounds[0], eps)
    if shared:
        eps = np.full(lam.shape[0], eps[0])
    return eps


def posterior_mode(S, T, baseline, eps):
    return (S + eps * baseline) / (T + eps)


# -- estimators -------------------------------------------------------------

def oracle_mle(traffic: TrafficSeries) -> EstimateReport:
    """Per-pair sample mean of the fully observed counts (the Poisson MLE)."""
    if traffic.T < 1:
        raise ContractError("oracle needs at least one tick")
    N = traffic.counts
    lam = N.mean(axis=0)
    T = N.shape[0]
    loglik = float(np.sum(xlogy(N.sum(axis=0), lam)) - T * lam.sum() - np.sum(gammaln(N + 1.0)))
    return EstimateReport("oracle", RateMatrix(traffic.topology, lam), iterations=0, objective_trace=[loglik])


class _EStep:
    """Binds the configured E-step engine to one observation series."""

    def __init__(self, op: ObservationOperator, obs: ObservationSeries, settings: EstimatorSettings):
        if obs.rows != op.rows:
            raise ContractError("observation rows do not match the operator")
        self.op = op
        self.Y = obs.y
        self.settings = settings
        self.mode = settings.estep
        self.enum = None
        if self.mode in ("exact", "auto"):
            try:
                enum = ExactEnumerator(op.matrix, settings.exact_budget)
                for y in np.unique(self.Y, axis=0):
                    enum.feasible(y)
                self.enum = enum
                self.mode = "exact"
            except BudgetExceededError:
                if self.mode == "exact":
                    raise
                self.mode = "ipf"

    def __call__(self, lam):
        """Return ``(S, complete-or-observed log-likelihood, diagnostics)``."""
        T = self.Y.shape[0]
        if self.mode == "exact":
            res = estep_exact_series(self.enum, lam, self.Y)
            return res.expected_counts, res.diagnostics["loglik"], res.diagnostics
        s = self.settings
        lam_f = np.maximum(lam, RATE_FLOOR)
        if s.pooling == "pooled":
            # totals over all ticks: S ~ Poisson(T * lam) with A S = sum_t y_t
            res = estep_ipf_series(self.op, T * lam_f, self.Y.sum(axis=0, keepdims=True), s.ipf_tol * T, s.ipf_max_iter)
            S = res.expected_counts
            surrogate = float(np.sum(xlogy(S, T * lam_f) - T * lam_f) - res.diagnostics["sum_lgamma"])
        else:
            res = estep_ipf_series(self.op, lam_f, self.Y, s.ipf_tol, s.ipf_max_iter)
            S = res.expected_counts
            surrogate = float(np.sum(xlogy(S, lam_f) - T * lam_f) - res.diagnostics["sum_lgamma"])
        return S, surrogate, res.diagnostics


def _em(estep: _EStep, init, T, baseline, settings: EstimatorSettings, use_prior: bool):
    lam = np.maximum(np.asarray(init, dtype=float), RATE_FLOOR)
    eps = None
    trace = []
    converged = False
    unconverged_ticks = 0
    k = 0
    for k in range(1, settings.em_max_iter + 1):
        S, ll, diag = estep(lam)
        unconverged_ticks += int(diag.get("unconverged", 0))
        if use_prior:
            if settings.fixed_epsilon is not None:
                eps = np.full(lam.shape, float(settings.fixed_epsilon))
            else:
                eps = optimize_epsilon(lam, baseline, settings.epsilon_bounds, settings.shared_epsilon)
            trace.append(ll + float(np.sum(gamma_log_prior(lam, baseline, eps))))
            new = posterior_mode(S, T, baseline, eps)
        else:
            trace.append(ll)
            new = S / T
        step = float(np.max(np.abs(new - lam))) if lam.size else 0.0
        lam = new
        if step < settings.em_tol:
            converged = True
            break
    return lam, eps, k, trace, {"converged": converged, "unconverged_ticks": unconverged_ticks, "estep": estep.mode}


def _random_inits(settings: EstimatorSettings, n_pairs: int, n: int):
    st = Streams(settings.seed)
    return [st.get("init", r).gamma(1.0, 1.0, size=n_pairs) for r in range(n)]


def _best_restart(runs):
    # highest final objective; ties go to the lowest restart index
    best = max(range(len(runs)), key=lambda r: (runs[r][3][-1] if runs[r][3] else -np.inf, -r))
    return best


def poisson_mle_em(obs: ObservationSeries, op: ObservationOperator, settings: EstimatorSettings | None = None,
                   init=None) -> EstimateReport:
    """EM for independent Poisson rates with no prior, best of several restarts.

    With the IPF engine, restarts are ranked by the complete-data
    log-likelihood at the E-step expectations, which is only a surrogate for the
    observed-data likelihood.
    """
    settings = settings or EstimatorSettings()
    if op.n_rows == 0:
        raise ContractError("at least one observation row is required")
    estep = _EStep(op, obs, settings)
    P = op.topology.n_pairs
    inits = [init] if init is not None else _random_inits(settings, P, settings.n_restarts)
    runs = [_em(estep, x0, obs.T, np.zeros(P), settings, use_prior=False) for x0 in inits]
    r = _best_restart(runs)
    lam, _, it, trace, info = runs[r]
    info.update(restart=r, restart_iterations=[run[2] for run in runs])
    return EstimateReport("poisson_mle", RateMatrix(op.topology, lam), it, trace, None, info)


def hipois_em(obs: ObservationSeries, op: ObservationOperator, baseline: RateMatrix,
              settings: EstimatorSettings | None = None, init=None) -> EstimateReport:
    """Hierarchical Poisson EM with per-pair belief parameters.

    Each iteration: E-step for the latent counts, then the belief ``eps`` is
    re-fit to the current rates within its bounds, then rates move to the
    gamma-Poisson posterior mode.
    """
    settings = settings or EstimatorSettings()
    if op.n_rows == 0:
        raise ContractError("at least one observation row is required")
    b = baseline.values
    P = op.topology.n_pairs
    if b.shape != (P,):
        raise ContractError("baseline does not match the operator's pairs")
    estep = _EStep(op, obs, settings)
    if init is not None:
        inits = [np.asarray(init.values if isinstance(init, RateMatrix) else init, dtype=float)]
    elif settings.init_mode == "baseline":
        inits = [b.copy()]
    elif settings.init_mode == "mre":
        inits = [mre_estimate(obs, op, baseline, settings).lambda_hat.values]
    else:
        inits = _random_inits(settings, P, settings.n_restarts)
    runs = [_em(estep, x0, obs.T, b, settings, use_prior=True) for x0 in inits]
    r = _best_restart(runs)
    lam, eps, it, trace, info = runs[r]
    if np.any(np.isclose(eps, settings.epsilon_bounds[0])) and settings.fixed_epsilon is None:
        info["eps_at_lower_bound"] = int(np.sum(np.isclose(eps, settings.epsilon_bounds[0])))
    info.update(restart=r, restart_iterations=[run[2] for run in runs])
    return EstimateReport("hipois", RateMatrix(op.topology, lam), it, trace, eps, info)


def mre_estimate(obs: ObservationSeries, op: ObservationOperator, baseline: RateMatrix,
                 settings: EstimatorSettings | None = None) -> EstimateReport:
    """L1-closest nonnegative rates to the baseline that reproduce the mean observations."""
    settings = settings or EstimatorSettings()
    if obs.rows != op.rows:
        raise ContractError("observation rows do not match the operator")
    lp = build_l1_projection_lp(baseline, op, obs.mean())
    res = lp_solve(lp, settings.lp_tol, settings.lp_max_iter)
    if res.status != "optimal":
        raise EstimationError(f"L1 projection failed with status {res.status}: {res.residuals}")
    lam = split_l1_solution(res.x, op.topology.n_pairs)
    return EstimateReport("mre", RateMatrix(op.topology, lam), res.iterations, [res.objective], None,
                          {"lp_status": res.status, "lp_residuals": res.residuals})


def mre_hipois(obs: ObservationSeries, op: ObservationOperator, baseline: RateMatrix,
               settings: EstimatorSettings | None = None) -> EstimateReport:
    settings = settings or EstimatorSettings()
    mre = mre_estimate(obs, op, baseline, settings)
    rep = hipois_em(obs, op, baseline, settings.replace(n_restarts=1), init=mre.lambda_hat.values)
    rep.estimator = "mre_hipois"
    rep.extra.update(lp_iterations=mre.iterations, mre_objective=mre.objective_trace[0],
                     em_iterations=rep.iterations)
    return rep


def run_estimator(tag: str, obs: ObservationSeries, op: ObservationOperator, baseline: RateMatrix | None,
                  settings: EstimatorSettings, traffic: TrafficSeries | None = None) -> EstimateReport:
    if tag == "oracle":
        if traffic is None:
            raise ContractError("the oracle needs the full traffic series")
        return oracle_mle(traffic)
    if tag == "poisson_mle":
        return poisson_mle_em(obs, op, settings)
    if baseline is None:
        raise ContractError(f"{tag} needs a baseline")
    if tag == "hipois":
        return hipois_em(obs, op, baseline, settings)
    if tag == "mre":
        return mre_estimate(obs, op, baseline, settings)
    if tag == "mre_hipois":
        return mre_hipois(obs, op, baseline, settings)
    raise ConfigurationError(f"unknown estimator {tag!r}; expected one of {ESTIMATORS}")
