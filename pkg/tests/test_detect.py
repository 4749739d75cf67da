import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nettomo.detect import (DetectionResult, calibrate_threshold, classify_edges, detect, frobenius_divergence,
                            roc_curve)
from nettomo.errors import CalibrationError, ContractError
from nettomo.network import RateMatrix, Topology

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_frobenius_examples():
    assert frobenius_divergence(np.ones(4), np.ones(4)) == 0.0
    assert frobenius_divergence(np.array([3.0, 0.0]), np.zeros(2)) == 3.0
    assert frobenius_divergence(np.array([3.0, 4.0]), np.zeros(2)) == 5.0


def test_frobenius_domain_mismatch():
    with pytest.raises(ContractError):
        frobenius_divergence(np.ones(3), np.ones(4))
    a = RateMatrix(Topology.create(3), np.ones(6))
    b = RateMatrix(Topology.create(4, pairs=[(0, 1), (0, 2), (0, 3), (1, 0), (1, 2), (1, 3)]), np.ones(6))
    with pytest.raises(ContractError):
        frobenius_divergence(a, b)


@given(st.lists(st.tuples(finite, finite, finite), min_size=1, max_size=12))
def test_frobenius_triangle_inequality(rows):
    a, b, c = (np.array(col) for col in zip(*rows))
    assert frobenius_divergence(a, c) <= frobenius_divergence(a, b) + frobenius_divergence(b, c) + 1e-9


def test_calibration_examples():
    stats = np.arange(1, 101)
    assert calibrate_threshold(stats, 0.05) == 96
    assert calibrate_threshold(stats, 1e-9) == 100
    assert calibrate_threshold(stats, 0.05) == calibrate_threshold(list(stats), 0.05)


def test_calibration_errors():
    with pytest.raises(CalibrationError):
        calibrate_threshold(range(19), 0.05)
    with pytest.raises(CalibrationError):
        calibrate_threshold(range(50), 0.0)
    with pytest.raises(CalibrationError):
        calibrate_threshold(range(50), 1.0)


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=20, max_size=300), st.floats(0.001, 0.999))
def test_calibration_fpr_bound(null, fpr):
    tau = calibrate_threshold(null, fpr)
    assert np.mean(np.asarray(null) > tau) <= fpr + 1e-12


def test_roc_perfect_and_reversed():
    assert roc_curve([1, 2, 3, 4], [0, 0, 1, 1]).auc == 1.0
    assert roc_curve([1, 2, 3, 4], [1, 1, 0, 0]).auc == 0.0


def test_roc_ties_move_together():
    r = roc_curve([1.0, 1.0, 1.0, 1.0], [0, 1, 0, 1])
    assert r.points() == [(0.0, 0.0), (1.0, 1.0)]
    assert r.auc == 0.5


def test_roc_random_labels_near_half():
    rng = np.random.default_rng(0)
    aucs = [roc_curve(rng.random(400), rng.random(400) < 0.5).auc for _ in range(20)]
    assert abs(np.mean(aucs) - 0.5) < 0.1


def test_roc_single_class():
    with pytest.raises(ContractError):
        roc_curve([1, 2, 3], [True, True, True])


@given(st.lists(st.tuples(st.integers(0, 20), st.booleans()), min_size=2, max_size=200))
def test_roc_monotone_and_bounded(data):
    stats, labels = zip(*data)
    if all(labels) or not any(labels):
        return
    r = roc_curve(np.array(stats, dtype=float), np.array(labels))
    assert np.all(np.diff(r.fpr) >= 0) and np.all(np.diff(r.tpr) >= 0)
    assert r.points()[0] == (0.0, 0.0) and r.points()[-1] == (1.0, 1.0)
    assert 0.0 <= r.auc <= 1.0
    # AUC equals the Mann-Whitney probability with ties counted half
    s, y = np.array(stats, dtype=float), np.array(labels)
    pos, neg = s[y], s[~y]
    mw = (np.sum(pos[:, None] > neg[None, :]) + 0.5 * np.sum(pos[:, None] == neg[None, :])) / (pos.size * neg.size)
    assert r.auc == pytest.approx(mw, abs=1e-12)


def test_roc_csv_and_json():
    r = roc_curve([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    lines = r.to_csv().splitlines()
    assert lines[0] == "fpr,tpr"
    assert len(lines) == len(r.fpr) + 1
    d = json.loads(json.dumps(r.to_dict()))
    assert d["auc"] == r.auc and d["thresholds"][0] == "inf"


def test_classify_examples():
    assert all(v[0] == "normal" for v in classify_edges(np.ones(3), np.ones(3)).values())
    assert classify_edges(np.array([0.0]), np.array([2.0]), 0.1)[0] == ("missing", -2.0)
    labels = classify_edges(np.array([0.5, 0.05, 1.5, 1.05]), np.array([0.0, 0.0, 1.0, 1.0]), 0.1)
    assert [v[0] for v in labels.values()] == ["new_edge", "normal", "changed", "normal"]


def test_classify_negative_tol():
    with pytest.raises(ContractError):
        classify_edges(np.ones(2), np.ones(2), -1.0)


def test_detection_result_round_trip():
    topo = Topology.create(3)
    base = RateMatrix(topo, [1.0, 0.0, 2.0, 1.0, 0.0, 1.0])
    est = RateMatrix(topo, [1.0, 0.6, 0.0, 1.0, 0.0, 1.5])
    res = detect(est, base, threshold=0.5)
    assert res.decision and res.statistic == pytest.approx(np.sqrt(0.36 + 4 + 0.25))
    assert {k: v[0] for k, v in res.anomalies().items()} == {(0, 2): "new_edge", (1, 0): "missing", (2, 1): "changed"}
    back = DetectionResult.from_dict(json.loads(res.to_json()))
    assert back == res
    assert res.to_csv().splitlines()[0] == "src,dst,label,change"


def test_detection_result_invariant():
    with pytest.raises(ContractError):
        DetectionResult(1.0, 2.0, True)
