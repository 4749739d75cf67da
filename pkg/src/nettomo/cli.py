"""Command-line entry point: ``nettomo {simulate,estimate,detect,study}``.

Exit codes: 0 success, 1 I/O error, 2 configuration or input-contract error,
3 computation failure (infeasible observations, failed solves, all trials
failed).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .detect import DetectionResult, calibrate_threshold, classify_edges, frobenius_divergence
from .errors import ConfigurationError, ContractError, NettomoError
from .estimators import ESTIMATORS, run_estimator
from .experiments import STUDIES, _observed_pairs, run_study
from .network import (ObservationScheme, ObservationSeries, RateMatrix, Topology, _check_keys, apply_operator,
                      build_operator, rows_from_json, rows_to_json)
from .simulate import GroundTruth, Streams, assign_routes, gen_ground_truth, sample_traffic, traffic_from_dict, \
    traffic_to_dict

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_COMPUTE = 0, 1, 2, 3
log = logging.getLogger("nettomo")

OBS_FORMAT = "nettomo.observations/1"
TRUTH_FORMAT = "nettomo.truth/1"
TRAFFIC_FORMAT = "nettomo.traffic/1"
ESTIMATE_FORMAT = "nettomo.estimate/1"
DETECTION_FORMAT = "nettomo.detection/1"


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, newline="")


def _read_json(path) -> dict:
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path}: invalid JSON: {e}") from None


def _expect_format(doc: dict, fmt: str, path):
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise ConfigurationError(f"{path}: expected a {fmt} document")


# ---------------------------------------------------------------- simulate

def simulate_documents(cfg: RunConfig, seed: int | None = None, paper_scale: bool = False) -> dict:
    """Truth, traffic and observation documents for one simulated instance."""
    sim = cfg.sim_config(seed, paper_scale)
    st = Streams(sim.seed, 0)
    topo = assign_routes(Topology.create(sim.n_exterior), sim.n_interior, st, sim.p_route)
    gt = gen_ground_truth(sim, st, topo)
    traffic = sample_traffic(gt, sim.T, st)
    extra = _observed_pairs(topo, cfg.scheme.observed_fraction, st, 0) if cfg.scheme.observed_fraction else ()
    scheme = cfg.scheme.resolve(topo, extra)
    op = build_operator(topo, scheme)
    obs = apply_operator(op, traffic)
    truth_doc = {"format": TRUTH_FORMAT, "seed": sim.seed, "sim": sim.to_dict(), **gt.to_dict()}
    traffic_doc = {"format": TRAFFIC_FORMAT, "seed": sim.seed, "topology": topo.to_dict(), **traffic_to_dict(traffic)}
    obs_doc = {
        "format": OBS_FORMAT,
        "seed": sim.seed,
        "topology": topo.to_dict(),
        "scheme": scheme.to_dict(),
        "baseline": gt.baseline.values.tolist(),
        "rows": rows_to_json(op.rows),
        "y": obs.y.tolist(),
    }
    return {"truth.json": truth_doc, "traffic.json": traffic_doc, "observations.json": obs_doc}


def cmd_simulate(args, cfg: RunConfig) -> int:
    docs = simulate_documents(cfg, args.seed, args.paper_scale)
    out = Path(args.out)
    for name, doc in docs.items():
        _write(out / name, _dump(doc))
    print(f"wrote {', '.join(str(out / n) for n in docs)}")
    return EXIT_OK


# ---------------------------------------------------------------- estimate

def load_observations(path):
    """Parse an observations file into (topology, operator, series, baseline)."""
    doc = _read_json(path)
    _expect_format(doc, OBS_FORMAT, path)
    _check_keys(doc, {"format", "seed", "topology", "scheme", "baseline", "rows", "y"}, "observations")
    topo = Topology.from_dict(doc["topology"])
    scheme = ObservationScheme.from_dict(doc["scheme"])
    op = build_operator(topo, scheme)
    rows = rows_from_json(doc["rows"])
    if rows != op.rows:
        raise ContractError(f"{path}: rows do not match the scheme")
    obs = ObservationSeries(rows, np.array(doc["y"], dtype=np.int64).reshape(-1, len(rows)))
    baseline = RateMatrix(topo, doc["baseline"]) if doc.get("baseline") is not None else None
    return topo, op, obs, baseline, doc.get("seed")


def load_traffic(path, topo: Topology):
    doc = _read_json(path)
    _expect_format(doc, TRAFFIC_FORMAT, path)
    if Topology.from_dict(doc["topology"]).pairs != topo.pairs:
        raise ContractError(f"{path}: traffic pairs do not match the observations")
    return traffic_from_dict({"T": doc["T"], "counts": doc["counts"]}, topo)


def estimate_document(tag, cfg: RunConfig, topo, op, obs, baseline, traffic=None, seed=None) -> dict:
    settings = cfg.settings_for(tag, seed)
    rep = run_estimator(tag, obs, op, baseline, settings, traffic=traffic)
    return {"format": ESTIMATE_FORMAT, "seed": settings.seed, "settings": settings.to_dict(),
            "settings_hash": settings.digest(), "T": obs.T, **rep.to_dict()}


def cmd_estimate(args, cfg: RunConfig) -> int:
    if args.estimator not in ESTIMATORS:
        raise ConfigurationError(f"unknown estimator {args.estimator!r}; expected one of {ESTIMATORS}")
    topo, op, obs, baseline, _ = load_observations(args.observations)
    traffic = load_traffic(args.traffic, topo) if args.traffic else None
    if args.estimator == "oracle" and traffic is None:
        raise ConfigurationError("the oracle estimator needs ground-truth traffic (--traffic)")
    doc = estimate_document(args.estimator, cfg, topo, op, obs, baseline, traffic, args.seed)
    _write(Path(args.out), _dump(doc))
    obj = doc["objective_trace"][-1] if doc["objective_trace"] else float("nan")
    print(f"{args.estimator}: iterations={doc['iterations']} objective={obj:.6g} -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- detect

def null_statistics(tag, cfg: RunConfig, topo, op, baseline, T, n, seed) -> list[float]:
    """Frobenius statistics of ``tag`` on ``n`` simulations without diversions."""
    out = []
    for k in range(n):
        st = Streams(seed, 1 + k)
        gt = GroundTruth(topo, baseline, baseline, ("none",) * topo.n_pairs)
        obs = apply_operator(op, sample_traffic(gt, T, st))
        s = cfg.settings_for(tag, seed)
        try:
            rep = run_estimator(tag, obs, op, baseline, s)
        except NettomoError as e:
            log.warning("null draw %d failed: %s", k, e)
            continue
        out.append(frobenius_divergence(rep.lambda_hat, baseline))
    return out


def cmd_detect(args, cfg: RunConfig) -> int:
    topo, op, obs, baseline, obs_seed = load_observations(args.observations)
    if baseline is None:
        raise ConfigurationError("detection needs the baseline stored in the observations file")
    est = _read_json(args.estimate)
    _expect_format(est, ESTIMATE_FORMAT, args.estimate)
    if [tuple(p) for p in est["pairs"]] != list(topo.pairs):
        raise ContractError("estimate and observations cover different pairs")
    lam = RateMatrix(topo, est["lambda_hat"])
    det = cfg.detect
    if args.threshold is not None:
        tau, n_null = float(args.threshold), 0
    else:
        seed = args.seed if args.seed is not None else int(obs_seed or 0)
        n_null = det.n_null or 200
        nulls = null_statistics(est["estimator"], cfg, topo, op, baseline, obs.T, n_null, seed)
        tau = calibrate_threshold(nulls, det.target_fpr)
    stat = frobenius_divergence(lam, baseline)
    res = DetectionResult(stat, tau, bool(stat > tau), classify_edges(lam, baseline, det.edge_tol))
    doc = {"format": DETECTION_FORMAT, "estimator": est["estimator"], "target_fpr": det.target_fpr,
           "edge_tol": det.edge_tol, "n_null": n_null, **res.to_dict()}
    out = Path(args.out)
    _write(out, _dump(doc))
    _write(out.with_suffix(".csv"), res.to_csv())
    flagged = ", ".join(f"{p[0]}->{p[1]}:{lab}" for p, (lab, _) in res.anomalies().items()) or "none"
    print(f"statistic={stat:.6g} threshold={tau:.6g} anomaly={res.decision} edges: {flagged}")
    return EXIT_OK


# ---------------------------------------------------------------- study

def cmd_study(args, cfg: RunConfig) -> int:
    spec = cfg.experiment(args.name, args.seed, args.paper_scale)
    res = run_study(spec, args.threads)
    res.write(args.out)
    print(res.one_line())
    if res.attempted and res.failures >= res.attempted:
        return EXIT_COMPUTE
    return EXIT_OK


# ---------------------------------------------------------------- main

def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="strict JSON run configuration")
    common.add_argument("--seed", type=_u64, help="root seed; overrides every seed in the config")
    common.add_argument("--threads", type=_positive, default=None,
                        help="worker processes (default: available cores); results do not depend on it")
    common.add_argument("--paper-scale", action="store_true", help="10 nodes and 200 trials instead of desk scale")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="nettomo", description="Network tomography estimators and diversion detection.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate one network, its traffic and observations")
    s.add_argument("--out", required=True, metavar="DIR")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("estimate", parents=[common], help="estimate rates from an observations file")
    e.add_argument("--observations", required=True, metavar="PATH")
    e.add_argument("--estimator", required=True, metavar="TAG", help=f"one of {', '.join(ESTIMATORS)}")
    e.add_argument("--traffic", metavar="PATH", help="full traffic (needed only by the oracle)")
    e.add_argument("--out", required=True, metavar="PATH")
    e.set_defaults(func=cmd_estimate)

    d = sub.add_parser("detect", parents=[common], help="test an estimate against the baseline")
    d.add_argument("--observations", required=True, metavar="PATH")
    d.add_argument("--estimate", required=True, metavar="PATH")
    d.add_argument("--threshold", type=float, help="skip null calibration and use this threshold")
    d.add_argument("--out", required=True, metavar="PATH")
    d.set_defaults(func=cmd_detect)

    st = sub.add_parser("study", parents=[common], help="run one of the simulation studies")
    st.add_argument("name", choices=STUDIES)
    st.add_argument("--out", required=True, metavar="DIR")
    st.set_defaults(func=cmd_study)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        return args.func(args, cfg)
    except (ConfigurationError, ContractError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyError as e:
        print(f"config error: missing field {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except NettomoError as e:
        print(f"computation failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_COMPUTE


if __name__ == "__main__":
    sys.exit(main())
