"""Network tomography for diversion detection.

Estimate per-pair Poisson message rates of a network from node-level
observations (egress, ingress, interior flow and optionally some directly
observed pairs), then test the estimate against a baseline.
"""
from .detect import DetectionResult, calibrate_threshold, classify_edges, frobenius_divergence, roc_curve
from .errors import (BudgetExceededError, CalibrationError, ConfigurationError, ContractError, EstimationError,
                     InfeasibleObservationError, NettomoError)
from .estimators import (EstimateReport, EstimatorSettings, hipois_em, mre_estimate, mre_hipois, oracle_mle,
                         poisson_mle_em, run_estimator)
from .estep import estep_exact, estep_ipf
from .lp import LinearProgram, lp_solve
from .network import (ObservationOperator, ObservationScheme, ObservationSeries, RateMatrix, Topology,
                      TrafficSeries, apply_operator, build_operator)
from .simulate import GroundTruth, SimConfig, Streams, gen_ground_truth, sample_traffic

__version__ = "0.1.0"

__all__ = [
    "BudgetExceededError", "CalibrationError", "ConfigurationError", "ContractError", "DetectionResult",
    "EstimateReport", "EstimationError", "EstimatorSettings", "GroundTruth", "InfeasibleObservationError",
    "LinearProgram", "NettomoError", "ObservationOperator", "ObservationScheme", "ObservationSeries",
    "RateMatrix", "SimConfig", "Streams", "Topology", "TrafficSeries", "apply_operator", "build_operator",
    "calibrate_threshold", "classify_edges", "estep_exact", "estep_ipf", "frobenius_divergence",
    "gen_ground_truth", "hipois_em", "lp_solve", "mre_estimate", "mre_hipois", "oracle_mle",
    "poisson_mle_em", "roc_curve", "run_estimator", "sample_traffic",
]
