"""Simulation studies: MSE versus observed edges, EM iterations, ROC over T,
and a single-instance network diff.

Every trial draws its randomness from ``Streams(spec.seed, trial)``, so a
trial's outcome does not depend on which worker ran it or in what order.
Results are gathered in trial order and reduced with numpy's fixed pairwise
summation, which keeps outputs byte-identical for any ``threads`` value.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .detect import calibrate_threshold, classify_edges, frobenius_divergence, roc_curve
from .errors import ConfigurationError, ContractError, NettomoError
from .estimators import ESTIMATORS, EstimatorSettings, run_estimator
from .network import ObservationScheme, RateMatrix, Topology, _check_keys, apply_operator, build_operator
from .simulate import GroundTruth, SimConfig, Streams, assign_routes, gen_ground_truth, inject_diversions, sample_traffic

STUDIES = ("mse_vs_edges", "em_iterations", "roc_over_T", "single_instance")
INIT_SERIES = {"random": "hipois", "mre": "mre_hipois"}
# frozen regression instance: 2 new edges and 1 missing edge, all recovered
SINGLE_INSTANCE_SEED = 14


@dataclass
class ExperimentSpec:
    """One study and its sweep.

    ``settings`` applies to every estimator; ``overrides`` maps an estimator
    tag to settings used for that tag only.
    """

    study: str
    sim: SimConfig = field(default_factory=lambda: SimConfig(n_exterior=6))
    fractions: tuple[float, ...] = (0.0,)
    T_values: tuple[int, ...] = (100,)
    estimators: tuple[str, ...] = ESTIMATORS
    init_modes: tuple[str, ...] = ("random", "mre")
    trials: int = 50
    seed: int = 0
    settings: EstimatorSettings = field(default_factory=EstimatorSettings)
    overrides: dict = field(default_factory=dict)
    p_arm: float = 0.5
    target_fpr: float = 0.05
    edge_tol: float = 0.1
    n_null: int = 50
    inject_new: int = 2
    inject_missing: int = 1
    out_dir: str | None = None

    def __post_init__(self):
        if self.study not in STUDIES:
            raise ConfigurationError(f"unknown study {self.study!r}; expected one of {STUDIES}")
        self.fractions = tuple(float(f) for f in self.fractions)
        self.T_values = tuple(int(t) for t in self.T_values)
        self.estimators = tuple(self.estimators)
        self.init_modes = tuple(self.init_modes)
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if list(self.fractions) != sorted(self.fractions) or list(self.T_values) != sorted(self.T_values):
            raise ConfigurationError("sweep values must be sorted ascending")
        if any(not 0.0 <= f <= 1.0 for f in self.fractions):
            raise ConfigurationError("edge-observation fractions must lie in [0, 1]")
        if any(t < 1 for t in self.T_values):
            raise ConfigurationError("T values must be >= 1")
        for tag in self.estimators + tuple(self.overrides):
            if tag not in ESTIMATORS:
                raise ConfigurationError(f"unknown estimator {tag!r}; expected one of {ESTIMATORS}")
        for m in self.init_modes:
            if m not in INIT_SERIES:
                raise ConfigurationError(f"unknown init mode {m!r}; expected one of {tuple(INIT_SERIES)}")
        if not 0.0 <= self.p_arm <= 1.0:
            raise ConfigurationError("p_arm must lie in [0, 1]")
        if not 0.0 < self.target_fpr < 1.0:
            raise ConfigurationError("target_fpr must lie in (0, 1)")
        if self.edge_tol < 0:
            raise ConfigurationError("edge_tol must be nonnegative")
        if self.study == "mse_vs_edges" and "oracle" not in self.estimators:
            raise ConfigurationError("mse_vs_edges needs the oracle as a reference")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if self.n_null != 0 and self.n_null < 20:
            raise ConfigurationError("n_null must be 0 (no calibration) or at least 20")

    def settings_for(self, tag: str) -> EstimatorSettings:
        return self.overrides.get(tag, self.settings)

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("sim", "settings", "overrides")}
        d["sim"] = self.sim.to_dict()
        d["settings"] = self.settings.to_dict()
        d["overrides"] = {k: v.to_dict() for k, v in sorted(self.overrides.items())}
        for k in ("fractions", "T_values", "estimators", "init_modes"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        _check_keys(d, set(cls.__dataclass_fields__), "study")
        d = dict(d)
        if "sim" in d:
            d["sim"] = SimConfig.from_dict(d["sim"])
        if "settings" in d:
            d["settings"] = EstimatorSettings.from_dict(d["settings"])
        if "overrides" in d:
            d["overrides"] = {k: EstimatorSettings.from_dict(v) for k, v in d["overrides"].items()}
        return cls(**d)

    def settings_hash(self) -> str:
        parts = [self.settings.digest()] + [f"{k}:{v.digest()}" for k, v in sorted(self.overrides.items())]
        return parts[0] if len(parts) == 1 else "+".join(parts)


def desk_spec(study: str, **kw) -> ExperimentSpec:
    """Small grids that finish in minutes on one core."""
    base = {
        "mse_vs_edges": dict(fractions=(0.0, 0.25, 0.5, 0.75, 1.0), T_values=(100,)),
        "em_iterations": dict(fractions=(0.0, 0.25, 0.5), T_values=(50, 100), trials=30),
        "roc_over_T": dict(fractions=(0.0,), T_values=(10, 50, 150), estimators=("mre_hipois",)),
        "single_instance": dict(fractions=(0.5,), T_values=(1000,), estimators=("mre_hipois",), trials=1,
                                seed=SINGLE_INSTANCE_SEED, n_null=20),
    }[study]
    base.update(kw)
    return ExperimentSpec(study=study, **base)


def paper_spec(study: str, **kw) -> ExperimentSpec:
    """The published configuration: 10 exterior nodes and 200 trials."""
    kw.setdefault("sim", SimConfig(n_exterior=10))
    kw.setdefault("trials", 1 if study == "single_instance" else 200)
    if study == "single_instance":
        kw.setdefault("n_null", 200)
    return desk_spec(study, **kw)


# ---------------------------------------------------------------- plumbing

def _trial_seed(seed: int, trial: int) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(trial), 1000))
    return int(ss.generate_state(1, np.uint64)[0])


def _map(fn, jobs, threads: int):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * threads))))


def _observed_pairs(topology: Topology, fraction: float, streams: Streams, cell: int):
    k = int(math.ceil(fraction * topology.n_pairs - 1e-9))
    g = streams.get("observed", cell)
    idx = np.sort(g.permutation(topology.n_pairs)[:k])
    return [topology.pairs[i] for i in idx]


def _instance(sim: SimConfig, streams: Streams, p_diversion: float | None = None):
    cfg = sim if p_diversion is None else sim.replace(p_diversion=p_diversion)
    topo = Topology.create(cfg.n_exterior)
    topo = assign_routes(topo, cfg.n_interior, streams, cfg.p_route)
    return gen_ground_truth(cfg, streams, topo)


def _setup(gt, T, fraction, streams, cell):
    traffic = sample_traffic(gt, T, streams)
    topo = gt.topology
    scheme = ObservationScheme.nodes_only(topo, _observed_pairs(topo, fraction, streams, cell))
    op = build_operator(topo, scheme)
    return traffic, op, apply_operator(op, traffic)


def _estimate(spec, tag, trial, gt, traffic, op, obs):
    s = spec.settings_for(tag).replace(seed=_trial_seed(spec.seed, trial))
    return run_estimator(tag, obs, op, gt.baseline, s, traffic=traffic)


def _mse(lam, truth) -> float:
    return float(np.mean((np.asarray(lam) - truth.values) ** 2))


def _summary(values):
    v = np.asarray([x for x in values if x is not None and np.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan"), 0
    se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
    return float(np.mean(v)), se, int(v.size)


@dataclass
class StudyResult:
    """Tables plus a JSON-able summary for one study run."""

    study: str
    spec: ExperimentSpec
    tables: dict  # name -> (header, rows)
    summary: dict
    extra_files: dict = field(default_factory=dict)  # name -> text
    failures: int = 0
    attempted: int = 0

    def table_csv(self, name: str) -> str:
        header, rows = self.tables[name]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])
        return buf.getvalue()

    def summary_json(self) -> str:
        doc = {"study": self.study, "spec": self.spec.to_dict(), "summary": self.summary,
               "failures": self.failures, "attempted": self.attempted}
        return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in sorted(self.tables):
            p = out / f"{self.study}_{name}.csv"
            p.write_text(self.table_csv(name), newline="")
            paths.append(p)
        for name in sorted(self.extra_files):
            p = out / name
            p.write_text(self.extra_files[name], newline="")
            paths.append(p)
        p = out / f"{self.study}_summary.json"
        p.write_text(self.summary_json())
        paths.append(p)
        return paths

    def one_line(self) -> str:
        return f"{self.study}: " + self.summary.get("line", "") + f" (failed trials: {self.failures}/{self.attempted})"


def _fmt(x):
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return x


def _clean(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def _provenance(spec):
    return [int(spec.seed), int(spec.trials), spec.settings_hash()]


PROV = ["seed", "trials", "settings_hash"]


# ---------------------------------------------------------------- studies

def _mse_trial(job):
    spec, trial = job
    st = Streams(spec.seed, trial)
    gt = _instance(spec.sim, st)
    T = spec.T_values[0]
    out = {}
    for c, f in enumerate(spec.fractions):
        traffic, op, obs = _setup(gt, T, f, st, c)
        for tag in spec.estimators:
            try:
                rep = _estimate(spec, tag, trial, gt, traffic, op, obs)
                out[(f, tag)] = (_mse(rep.lambda_hat.values, gt.truth), None)
            except NettomoError as e:
                out[(f, tag)] = (None, f"{type(e).__name__}: {e}")
    return out


def run_mse_vs_edges(spec: ExperimentSpec, threads: int = 1) -> StudyResult:
    """Mean per-pair squared rate error against truth for each fraction of
    directly observed pairs and each estimator.

    Uses the first entry of ``spec.T_values`` as the observation time. The
    observed subset is drawn fresh for each trial.
    """
    res = _map(_mse_trial, [(spec, t) for t in range(spec.trials)], threads)
    rows, plot, per_trial, failures, errors = [], [], [], 0, []
    summary = {}
    for f in spec.fractions:
        for tag in spec.estimators:
            vals = [r[(f, tag)][0] for r in res]
            for t, r in enumerate(res):
                v, err = r[(f, tag)]
                per_trial.append([f, tag, t, float("nan") if v is None else v])
                if err:
                    failures += 1
                    errors.append(f"trial {t} f={f} {tag}: {err}")
            m, se, n = _summary(vals)
            rows.append([f, tag, m, se, n, spec.trials - n] + _provenance(spec))
            plot.append([f, m, tag])
            summary.setdefault(repr(f), {})[tag] = {"mean_mse": m, "se": se, "n": n}
    line = "; ".join(
        f"f={f}: " + ", ".join(f"{tag}={summary[repr(f)][tag]['mean_mse']:.4g}" for tag in spec.estimators)
        for f in spec.fractions)
    return StudyResult(
        "mse_vs_edges", spec,
        {"table": (["fraction_observed", "estimator", "mean_mse", "std_error", "n_ok", "n_failed"] + PROV, rows),
         "trials": (["fraction_observed", "estimator", "trial", "mse"], per_trial),
         "plot": (["x", "y", "series"], plot)},
        {"cells": summary, "errors": errors, "line": line, "T": spec.T_values[0]},
        failures=failures, attempted=spec.trials * len(spec.fractions) * len(spec.estimators))


def _iter_trial(job):
    spec, trial = job
    st = Streams(spec.seed, trial)
    gt = _instance(spec.sim, st)
    out = {}
    for T in spec.T_values:
        for c, f in enumerate(spec.fractions):
            traffic, op, obs = _setup(gt, T, f, st, c)
            for mode in spec.init_modes:
                tag = INIT_SERIES[mode]
                try:
                    rep = _estimate(spec, tag, trial, gt, traffic, op, obs)
                    # every random restart is one random-init EM run
                    runs = [int(k) for k in rep.extra.get("restart_iterations", [rep.iterations])]
                    cap = spec.settings_for(tag).em_max_iter
                    out[(T, f, mode)] = (runs, sum(k >= cap for k in runs), None)
                except NettomoError as e:
                    out[(T, f, mode)] = ([], 0, f"{type(e).__name__}: {e}")
    return out


def run_em_iterations(spec: ExperimentSpec, threads: int = 1) -> StudyResult:
    """Mean EM iterations per (T, fraction, init mode) cell.

    Random init is hipois with ``n_restarts`` random starts, each counted as
    one run; MRE init is mre_hipois, one run per trial. Means and standard
    errors are over runs. Runs that hit ``em_max_iter`` count at that value
    and are reported as censored.
    """
    res = _map(_iter_trial, [(spec, t) for t in range(spec.trials)], threads)
    rows, plot, failures, errors, summary = [], [], 0, [], {}
    for T in spec.T_values:
        for f in spec.fractions:
            for mode in spec.init_modes:
                cells = [r[(T, f, mode)] for r in res]
                for t, c in enumerate(cells):
                    if c[2]:
                        failures += 1
                        errors.append(f"trial {t} T={T} f={f} {mode}: {c[2]}")
                m, se, n = _summary([k for c in cells for k in c[0]])
                cens = sum(c[1] for c in cells)
                rows.append([T, f, mode, m, se, n, cens] + _provenance(spec))
                plot.append([f, m, f"{mode}_T{T}"])
                summary.setdefault(f"T={T}", {}).setdefault(repr(f), {})[mode] = {
                    "mean_iterations": m, "se": se, "n": n, "censored": cens}
    line = "; ".join(
        f"T={T} f={f}: " + ", ".join(f"{m}={summary[f'T={T}'][repr(f)][m]['mean_iterations']:.1f}"
                                     for m in spec.init_modes)
        for T in spec.T_values for f in spec.fractions)
    return StudyResult(
        "em_iterations", spec,
        {"table": (["T", "fraction_observed", "init_mode", "mean_iterations", "std_error", "n_runs", "censored"] + PROV,
                   rows),
         "plot": (["x", "y", "series"], plot)},
        {"cells": summary, "errors": errors, "line": line},
        failures=failures, attempted=spec.trials * len(spec.T_values) * len(spec.fractions) * len(spec.init_modes))


def _roc_trial(job):
    spec, trial = job
    st = Streams(spec.seed, trial)
    arm = bool(st.get("arm").random() < spec.p_arm)
    gt = _instance(spec.sim, st, None if arm else 0.0)
    positive = any(lab != "none" for lab in gt.labels)
    tag = spec.estimators[0]
    out = {}
    for T in spec.T_values:
        traffic, op, obs = _setup(gt, T, spec.fractions[0], st, 0)
        try:
            rep = _estimate(spec, tag, trial, gt, traffic, op, obs)
            out[T] = (frobenius_divergence(rep.lambda_hat, gt.baseline), None)
        except NettomoError as e:
            out[T] = (None, f"{type(e).__name__}: {e}")
    return positive, out


def run_roc_over_T(spec: ExperimentSpec, threads: int = 1) -> StudyResult:
    """ROC and AUC of the Frobenius statistic for each observation time.

    Each trial is a diversion trial with probability ``p_arm`` (diversions as
    in ``spec.sim``) and a null trial otherwise (no diversions). A diversion
    trial whose draw happens to contain no diversion counts as a negative.
    Only the first estimator and first fraction in the spec are used.
    """
    res = _map(_roc_trial, [(spec, t) for t in range(spec.trials)], threads)
    labels = np.array([r[0] for r in res])
    roc_rows, auc_rows, plot, errors, failures, summary = [], [], [], [], 0, {}
    for T in spec.T_values:
        ok = [i for i, r in enumerate(res) if r[1][T][0] is not None]
        for i, r in enumerate(res):
            if r[1][T][1]:
                failures += 1
                errors.append(f"trial {i} T={T}: {r[1][T][1]}")
        stats = np.array([res[i][1][T][0] for i in ok])
        lab = labels[ok]
        try:
            roc = roc_curve(stats, lab)
            auc = roc.auc
            for fp, tp in roc.points():
                roc_rows.append([T, fp, tp])
                plot.append([fp, tp, f"T={T}"])
        except ContractError as e:
            auc = float("nan")
            errors.append(f"T={T}: {e}")
        auc_rows.append([T, auc, int(lab.sum()), int((~lab).sum())] + _provenance(spec))
        summary[f"T={T}"] = {"auc": auc, "positives": int(lab.sum()), "negatives": int((~lab).sum())}
    line = "AUC " + ", ".join(f"T={T}: {summary[f'T={T}']['auc']:.3f}" for T in spec.T_values)
    return StudyResult(
        "roc_over_T", spec,
        {"roc": (["T", "fpr", "tpr"], roc_rows),
         "auc": (["T", "auc", "positives", "negatives"] + PROV, auc_rows),
         "plot": (["x", "y", "series"], plot)},
        {"auc": summary, "errors": errors, "line": line, "estimator": spec.estimators[0]},
        failures=failures, attempted=spec.trials * len(spec.T_values))


def _null_stat(job):
    spec, baseline_vals, topo_dict, k = job
    topo = Topology.from_dict(topo_dict)
    base = RateMatrix(topo, baseline_vals)
    st = Streams(spec.seed, 1 + k)
    gt = GroundTruth(topo, base, base, ("none",) * topo.n_pairs)
    traffic, op, obs = _setup(gt, spec.T_values[0], spec.fractions[0], st, 0)
    try:
        rep = _estimate(spec, spec.estimators[0], 1 + k, gt, traffic, op, obs)
        return frobenius_divergence(rep.lambda_hat, base)
    except NettomoError:
        return None


def single_instance_truth(spec: ExperimentSpec):
    """Baseline from ``spec.sim`` with the requested injected edges."""
    st = Streams(spec.seed, 0)
    base = _instance(spec.sim, st, p_diversion=0.0)
    if spec.inject_new == 0 and spec.inject_missing == 0:
        return base
    return inject_diversions(base.baseline, spec.inject_new, spec.inject_missing, st, spec.sim.diversion_gamma)


def run_single_instance(spec: ExperimentSpec, threads: int = 1) -> StudyResult:
    """Full pipeline on one instance with injected new and missing edges.

    The threshold comes from ``spec.n_null`` fresh null simulations (no
    diversions) on the same topology, baseline, T and observation scheme.
    Emits the estimated network, the per-pair labels and a diff listing only
    the non-normal pairs.
    """
    gt = single_instance_truth(spec)
    st = Streams(spec.seed, 0)
    traffic, op, obs = _setup(gt, spec.T_values[0], spec.fractions[0], st, 0)
    tag = spec.estimators[0]
    rep = _estimate(spec, tag, 0, gt, traffic, op, obs)
    stat = frobenius_divergence(rep.lambda_hat, gt.baseline)
    jobs = [(spec, gt.baseline.values.tolist(), gt.topology.to_dict(), k) for k in range(spec.n_null)]
    nulls = [s for s in _map(_null_stat, jobs, threads) if s is not None]
    tau = calibrate_threshold(nulls, spec.target_fpr) if spec.n_null else float("nan")
    labels = classify_edges(rep.lambda_hat, gt.baseline, spec.edge_tol)
    injected = {p: lab for p, lab in gt.diverted().items()}
    diff = {
        "statistic": stat,
        "threshold": tau,
        "decision": bool(stat > tau) if not math.isnan(tau) else None,
        "estimator": tag,
        "T": spec.T_values[0],
        "edge_tol": spec.edge_tol,
        "changes": [
            {"pair": list(p), "label": lab, "baseline": float(gt.baseline[p]), "estimate": float(rep.lambda_hat[p]),
             "change": mag}
            for p, (lab, mag) in labels.items() if lab != "normal"],
        "injected": [{"pair": list(p), "label": lab} for p, lab in injected.items()],
    }
    edge_rows = [[p[0], p[1], float(gt.baseline[p]), float(rep.lambda_hat[p]), labels[p][0]]
                 for p in gt.topology.pairs]
    found = {tuple(c["pair"]): c["label"] for c in diff["changes"]}
    line = f"statistic={stat:.4f} tau={tau:.4f} labels=" + (
        ",".join(f"{p[0]}->{p[1]}:{lab}" for p, lab in found.items()) or "none")
    return StudyResult(
        "single_instance", spec,
        {"edges": (["src", "dst", "baseline", "estimate", "label"], edge_rows)},
        {"diff": diff, "line": line, "recovered": found == _expected_labels(injected)},
        extra_files={"single_instance_diff.json": json.dumps(_clean(diff), indent=2, sort_keys=True) + "\n"},
        attempted=1)


def _expected_labels(injected: dict) -> dict:
    conv = {"new_edge": "new_edge", "missing": "missing", "increased": "changed"}
    return {p: conv[lab] for p, lab in injected.items()}


def read_diff(text: str) -> dict:
    """Parse a diff written by :func:`run_single_instance`."""
    return json.loads(text)


RUNNERS = {
    "mse_vs_edges": run_mse_vs_edges,
    "em_iterations": run_em_iterations,
    "roc_over_T": run_roc_over_T,
    "single_instance": run_single_instance,
}


def run_study(spec: ExperimentSpec, threads: int | None = None) -> StudyResult:
    threads = (os.cpu_count() or 1) if threads is None else max(1, int(threads))
    return RUNNERS[spec.study](spec, threads)
