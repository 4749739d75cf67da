"""Anomaly decisions from estimated rates.

The global test declares an anomaly when the Frobenius distance between the
estimated and baseline rate matrices exceeds a threshold calibrated on null
simulations. :func:`classify_edges` is a per-pair reconstruction of how the
estimated network is compared with the baseline; it is not a calibrated test.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, ContractError
from .network import RateMatrix

EDGE_LABELS = ("new_edge", "missing", "changed", "normal")
MIN_NULL_SAMPLES = 20


def _values(r):
    if isinstance(r, RateMatrix):
        return r.values, r.topology.pairs
    return np.asarray(r, dtype=float), None


def _match(a, b):
    va, pa = _values(a)
    vb, pb = _values(b)
    if va.shape != vb.shape or (pa is not None and pb is not None and pa != pb):
        raise ContractError("estimate and baseline are defined on different pair sets")
    return va, vb, pa if pa is not None else pb


def frobenius_divergence(lambda_hat, baseline) -> float:
    """``||lambda_hat - baseline||_F`` over the pair universe."""
    a, b, _ = _match(lambda_hat, baseline)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def calibrate_threshold(null_statistics, target_fpr: float) -> float:
    """Empirical ``1 - target_fpr`` quantile of null statistics.

    Uses the "higher" convention (the smallest order statistic at or above the
    quantile position), so the empirical false-positive rate of ``stat > tau``
    on the calibration sample never exceeds ``target_fpr``.

    Examples
    --------
    >>> calibrate_threshold(range(1, 101), 0.05)
    96.0
    """
    s = np.sort(np.asarray(list(null_statistics), dtype=float))
    if s.size < MIN_NULL_SAMPLES:
        raise CalibrationError(f"need at least {MIN_NULL_SAMPLES} null statistics, got {s.size}")
    if not 0.0 < target_fpr < 1.0:
        raise CalibrationError(f"target_fpr must lie in (0, 1), got {target_fpr}")
    if not np.all(np.isfinite(s)):
        raise CalibrationError("null statistics must be finite")
    return float(np.quantile(s, 1.0 - target_fpr, method="higher"))


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_dict(self) -> dict:
        th = [float(t) if np.isfinite(t) else ("inf" if t > 0 else "-inf") for t in self.thresholds]
        return {"fpr": self.fpr.tolist(), "tpr": self.tpr.tolist(), "thresholds": th, "auc": self.auc}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["fpr", "tpr"])
        for f, t in zip(self.fpr, self.tpr):
            w.writerow([repr(float(f)), repr(float(t))])
        return buf.getvalue()


def roc_curve(statistics, labels) -> RocCurve:
    """ROC of the rule ``stat >= tau`` swept over every distinct statistic.

    Tied statistics enter together, so a tie between classes gives a diagonal
    segment. A sentinel threshold ``+inf`` starts the curve at (0, 0);
    the lowest statistic ends it at (1, 1). AUC is the trapezoidal area.
    """
    s = np.asarray(statistics, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ContractError("statistics and labels must be 1-d and of equal length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ContractError("ROC needs both positive and negative examples")
    if not np.all(np.isfinite(s)):
        raise ContractError("statistics must be finite")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each block of equal statistics
    ends = np.r_[np.nonzero(np.diff(s))[0], s.size - 1]
    tp = np.cumsum(y)[ends]
    fp = (ends + 1) - tp
    fpr = np.r_[0.0, fp / n_neg]
    tpr = np.r_[0.0, tp / n_pos]
    thresholds = np.r_[np.inf, s[ends]]
    auc = float(np.trapezoid(tpr, fpr)) if hasattr(np, "trapezoid") else float(np.trapz(tpr, fpr))
    return RocCurve(fpr, tpr, thresholds, min(max(auc, 0.0), 1.0))


def classify_edges(lambda_hat, baseline, edge_tol: float = 0.1) -> dict:
    """Label each pair new_edge, missing, changed or normal.

    Rules, applied in order: ``new_edge`` when the baseline is zero and the
    estimate exceeds ``edge_tol``; ``missing`` when the baseline exceeds
    ``edge_tol`` and the estimate does not; ``changed`` when the two differ by
    more than ``edge_tol``; otherwise ``normal``.

    Returns
    -------
    dict
        ``pair -> (label, estimate - baseline)``. Pairs are indices when plain
        arrays are passed.
    """
    if edge_tol < 0:
        raise ContractError("edge_tol must be nonnegative")
    a, b, pairs = _match(lambda_hat, baseline)
    keys = pairs if pairs is not None else tuple(range(a.size))
    out = {}
    for k, key in enumerate(keys):
        lh, l0 = float(a[k]), float(b[k])
        if l0 == 0.0 and lh > edge_tol:
            lab = "new_edge"
        elif l0 > edge_tol and lh <= edge_tol:
            lab = "missing"
        elif abs(lh - l0) > edge_tol:
            lab = "changed"
        else:
            lab = "normal"
        out[key] = (lab, lh - l0)
    return out


@dataclass
class DetectionResult:
    statistic: float
    threshold: float
    decision: bool
    per_edge: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.decision != (self.statistic > self.threshold):
            raise ContractError("decision must equal statistic > threshold")

    def anomalies(self) -> dict:
        return {k: v for k, v in self.per_edge.items() if v[0] != "normal"}

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "threshold": self.threshold,
            "decision": self.decision,
            "per_edge": [
                {"pair": list(k) if isinstance(k, tuple) else k, "label": lab, "change": mag}
                for k, (lab, mag) in self.per_edge.items()
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "DetectionResult":
        per = {}
        for e in d["per_edge"]:
            key = tuple(e["pair"]) if isinstance(e["pair"], list) else e["pair"]
            per[key] = (e["label"], float(e["change"]))
        return cls(float(d["statistic"]), float(d["threshold"]), bool(d["decision"]), per)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["src", "dst", "label", "change"])
        for k, (lab, mag) in self.per_edge.items():
            src, dst = k if isinstance(k, tuple) else (k, "")
            w.writerow([src, dst, lab, repr(float(mag))])
        return buf.getvalue()


def detect(lambda_hat: RateMatrix, baseline: RateMatrix, threshold: float, edge_tol: float = 0.1) -> DetectionResult:
    """Global test plus per-pair labels for one estimate."""
    stat = frobenius_divergence(lambda_hat, baseline)
    return DetectionResult(stat, float(threshold), bool(stat > threshold), classify_edges(lambda_hat, baseline, edge_tol))
