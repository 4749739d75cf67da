"""Acceptance criteria 1-7.

Each test prints one ``criterion N: PASS|FAIL ...`` line with the measured
numbers, then asserts the criterion at its stated tolerance. The paper-scale
ROC run (about half an hour on one core) only runs when
``NETTOMO_PAPER_SCALE=1``; otherwise it is reported as skipped.
"""
import os
import subprocess
import sys
import time
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from nettomo.experiments import (_instance, desk_spec, paper_spec, run_em_iterations, run_mse_vs_edges,
                                 run_roc_over_T, run_single_instance)
from nettomo.simulate import SimConfig, Streams

pytestmark = pytest.mark.slow

TESTS = Path(__file__).parent


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail, seconds=None):
        took = f" [{seconds:.0f}s]" if seconds is not None else ""
        with capsys.disabled():
            status = "SKIP" if detail.startswith("SKIPPED") else ("PASS" if ok else "FAIL")
            print(f"\ncriterion {n}: {status} {detail}{took}")
    return emit


def _timed(fn, *a):
    t = time.perf_counter()
    out = fn(*a)
    return out, time.perf_counter() - t


def _cell(res, f, tag):
    c = res.summary["cells"][repr(f)][tag]
    return c["mean_mse"], c["se"]


def test_criterion_1_oracle_attains_crlb(report):
    spec = desk_spec("mse_vs_edges", sim=SimConfig(n_exterior=6), fractions=(0.0,), T_values=(50,),
                     estimators=("oracle",), trials=200)
    res, secs = _timed(run_mse_vs_edges, spec)
    mse, _ = _cell(res, 0.0, "oracle")
    # CRLB per pair is lambda/T; average over pairs and trials on the same draws
    bound = np.mean([_instance(spec.sim, Streams(spec.seed, t)).truth.values.mean() for t in range(spec.trials)]) / 50
    rel = mse / bound - 1
    ok = abs(rel) <= 0.15 and secs <= 60
    report(1, ok, f"oracle MSE={mse:.5f} bound mean(lambda)/T={bound:.5f} rel.dev={rel:+.3f} (tol 0.15)", secs)
    assert ok


def test_criterion_2_ordering_without_observed_edges(report):
    spec = desk_spec("mse_vs_edges", fractions=(0.0,), T_values=(100,),
                     estimators=("oracle", "poisson_mle", "hipois", "mre", "mre_hipois"), trials=50)
    res, secs = _timed(run_mse_vs_edges, spec)
    order = ["mre_hipois", "mre", "hipois", "poisson_mle"]
    cells = {t: _cell(res, 0.0, t) for t in order}
    gaps = []
    for a, b in zip(order, order[1:]):
        (ma, sa), (mb, sb) = cells[a], cells[b]
        gaps.append((mb - ma) / np.hypot(sa, sb))
    ok = all(g >= 1.0 for g in gaps) and secs <= 600
    desc = " < ".join(f"{t}={cells[t][0]:.4f}(se {cells[t][1]:.4f})" for t in order)
    report(2, ok, f"{desc}; gaps in pooled SE: " + ", ".join(f"{g:.2f}" for g in gaps) + " (need >= 1)", secs)
    assert ok


def test_criterion_3_full_observation_reaches_oracle(report):
    spec = desk_spec("mse_vs_edges", fractions=(1.0,), T_values=(100,), trials=50)
    res, secs = _timed(run_mse_vs_edges, spec)
    mo, so = _cell(res, 1.0, "oracle")
    devs = {}
    for tag in spec.estimators:
        if tag != "oracle":
            m, s = _cell(res, 1.0, tag)
            devs[tag] = (m, abs(m - mo) / np.hypot(s, so))
    ok = all(d <= 2.0 for _, d in devs.values()) and secs <= 120
    report(3, ok, f"oracle={mo:.5f}; " + ", ".join(f"{t}={m:.5f} ({d:.1f} SE)" for t, (m, d) in devs.items())
           + " (need <= 2 SE)", secs)
    assert ok


def _roc_check(res, floor):
    auc = {T: res.summary["auc"][f"T={T}"]["auc"] for T in (10, 50, 150)}
    ordered = auc[150] > auc[50] - 0.03 and auc[50] > auc[10] - 0.03
    return auc, auc[150] >= floor and ordered


def test_criterion_4_roc_desk_scale(report):
    spec = desk_spec("roc_over_T", trials=50)
    res, secs = _timed(run_roc_over_T, spec)
    auc, ok = _roc_check(res, 0.9)
    ok = ok and secs <= 600
    report("4 (desk)", ok, "AUC " + ", ".join(f"T={T}: {a:.3f}" for T, a in auc.items())
           + " (need T=150 >= 0.9, increasing within 0.03)", secs)
    assert ok


def test_criterion_4_roc_paper_scale(report):
    if os.environ.get("NETTOMO_PAPER_SCALE") != "1":
        report("4 (paper)", True, "SKIPPED: set NETTOMO_PAPER_SCALE=1 to run 10 nodes x 200 trials")
        pytest.skip("paper-scale ROC needs NETTOMO_PAPER_SCALE=1")
    spec = paper_spec("roc_over_T")
    res, secs = _timed(run_roc_over_T, spec, os.cpu_count() or 1)
    auc, ok = _roc_check(res, 0.95)
    ok = ok and secs <= 3600
    report("4 (paper)", ok, "AUC " + ", ".join(f"T={T}: {a:.3f}" for T, a in auc.items())
           + " (need T=150 >= 0.95, increasing within 0.03)", secs)
    assert ok


def test_criterion_5_mre_init_halves_iterations(report):
    spec = desk_spec("em_iterations", fractions=(0.0,), T_values=(100,), trials=30)
    res, secs = _timed(run_em_iterations, spec)
    c = res.summary["cells"]["T=100"]["0.0"]
    r, m = c["random"]["mean_iterations"], c["mre"]["mean_iterations"]
    ok = m < 0.5 * r and secs <= 600
    report(5, ok, f"random={r:.1f} (runs {c['random']['n']}, censored {c['random']['censored']}) "
                  f"mre={m:.1f} (runs {c['mre']['n']}, censored {c['mre']['censored']}) "
                  f"ratio={m / r:.2f} (need < 0.5)", secs)
    assert ok


PROPERTY_SUITES = {
    "exact E-step vs rational brute force": ["test_estep.py::test_exact_matches_rational_oracle"],
    "IPF residual and KL monotonicity": ["test_estep.py::test_ipf_residual_and_monotone_objective"],
    "LP vs vertex enumeration, KKT": ["test_lp.py::test_matches_vertex_enumeration_and_kkt"],
    "M-step mode vs grid search": ["test_estimators.py::test_m_step_matches_grid_search"],
    "EM monotone with exact E-step": ["test_estimators.py::test_em_objective_monotone_with_exact_estep"],
    "ROC, AUC, calibration, triangle": ["test_detect.py::test_roc_monotone_and_bounded",
                                        "test_detect.py::test_calibration_fpr_bound",
                                        "test_detect.py::test_frobenius_triangle_inequality"],
    "byte-identical outputs": ["test_cli.py::test_simulate_writes_documents_and_is_deterministic",
                               "test_cli.py::test_estimate_matches_in_process",
                               "test_cli.py::test_detect_is_deterministic",
                               "test_cli.py::test_study_identical_across_threads",
                               "test_experiments.py::test_outputs_identical_across_runs_and_threads"],
}


def test_criterion_6_property_suites(report, tmp_path):
    xml = tmp_path / "props.xml"
    ids = [str(TESTS / i) for ids in PROPERTY_SUITES.values() for i in ids]
    t = time.perf_counter()
    subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider", f"--junitxml={xml}", *ids],
                   capture_output=True, text=True, cwd=TESTS.parent)
    secs = time.perf_counter() - t
    outcome = {}
    for case in ET.parse(xml).getroot().iter("testcase"):
        name = case.get("name").split("[")[0]
        bad = any(ch.tag in ("failure", "error") for ch in case)
        outcome.setdefault(name, []).append(not bad)
    parts, ok = [], True
    for suite, members in PROPERTY_SUITES.items():
        res = [r for m in members for r in outcome.get(m.split("::")[1], [False])]
        ok &= all(res)
        parts.append(f"{suite} {sum(res)}/{len(res)}")
    report(6, ok, "; ".join(parts), secs)
    assert ok


def test_criterion_7_single_instance_recovery(report):
    # recovery is judged by classify_edges alone; the null calibration is not part of it
    spec = desk_spec("single_instance", n_null=0)
    res, secs = _timed(run_single_instance, spec)
    diff = res.summary["diff"]
    found = sorted((tuple(c["pair"]), c["label"]) for c in diff["changes"])
    want = sorted((tuple(c["pair"]), c["label"]) for c in diff["injected"])
    ok = res.summary["recovered"] and secs <= 60
    report(7, ok, f"injected {want}; found {found}; statistic={diff['statistic']:.3f}", secs)
    assert ok
