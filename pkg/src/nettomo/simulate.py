"""Random networks, baselines, diversions and Poisson traffic.

All randomness comes from :class:`Streams`, which derives independent Philox
(counter-based, 64-bit) generators per ``(seed, trial, component)`` so any one
component can be re-drawn without disturbing the others.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError
from .network import RateMatrix, Topology, TrafficSeries, _check_keys

LABELS = ("none", "new_edge", "increased", "missing")

COMPONENTS = {
    "support": 0,
    "rates": 1,
    "diversions": 2,
    "traffic": 3,
    "routes": 4,
    "observed": 5,
    "init": 6,
    "arm": 7,
}


class Streams:
    """Named substreams of one root seed for a single trial."""

    def __init__(self, seed: int, trial: int = 0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.trial = int(trial)

    def get(self, component: str, *extra: int) -> np.random.Generator:
        key = (self.trial, COMPONENTS[component]) + tuple(int(e) for e in extra)
        ss = np.random.SeedSequence(self.seed, spawn_key=key)
        return np.random.Generator(np.random.Philox(ss))

    def __repr__(self):
        return f"Streams(seed={self.seed}, trial={self.trial})"


def _gen(rng, component):
    if isinstance(rng, Streams):
        return rng.get(component)
    if rng is None:
        raise ConfigurationError("an explicit rng or Streams is required")
    return rng


@dataclass(frozen=True)
class SimConfig:
    n_exterior: int = 10
    n_interior: int = 0
    p_edge: float = 0.65
    baseline_gamma: tuple[float, float] = (1.75, 1.0)
    diversion_gamma: tuple[float, float] = (0.75, 1.0)
    p_diversion: float = 0.2
    p_missing_given_diversion: float = 0.25
    p_route: float = 0.5
    T: int = 100
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "baseline_gamma", tuple(float(x) for x in self.baseline_gamma))
        object.__setattr__(self, "diversion_gamma", tuple(float(x) for x in self.diversion_gamma))
        if self.n_exterior < 2:
            raise ConfigurationError("n_exterior must be at least 2")
        if self.n_interior < 0:
            raise ConfigurationError("n_interior must be nonnegative")
        for name in ("p_edge", "p_diversion", "p_missing_given_diversion", "p_route"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1], got {v}")
        for name in ("baseline_gamma", "diversion_gamma"):
            g = getattr(self, name)
            if len(g) != 2 or min(g) <= 0:
                raise ConfigurationError(f"{name} needs positive (shape, rate), got {g}")
        if self.T < 1:
            raise ConfigurationError("T must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")

    def replace(self, **kw) -> "SimConfig":
        d = asdict(self)
        d.update(kw)
        return SimConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["baseline_gamma"] = list(self.baseline_gamma)
        d["diversion_gamma"] = list(self.diversion_gamma)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        _check_keys(d, set(cls.__dataclass_fields__), "sim")
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    topology: Topology
    baseline: RateMatrix
    truth: RateMatrix
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(self.labels) != self.topology.n_pairs:
            raise ConfigurationError("one diversion label per pair is required")
        b, t = self.baseline.values, self.truth.values
        for k, lab in enumerate(self.labels):
            if lab not in LABELS:
                raise ConfigurationError(f"unknown label {lab!r}")
            if lab == "none" and b[k] != t[k]:
                raise ConfigurationError("label 'none' requires truth == baseline")
            if lab == "missing" and not (t[k] == 0 and b[k] > 0):
                raise ConfigurationError("label 'missing' requires truth 0 and baseline > 0")
            if lab == "new_edge" and not (b[k] == 0 and t[k] > 0):
                raise ConfigurationError("label 'new_edge' requires baseline 0 and truth > 0")

    def diverted(self) -> dict:
        return {p: lab for p, lab in zip(self.topology.pairs, self.labels) if lab != "none"}

    def to_dict(self) -> dict:
        return {
            "topology": self.topology.to_dict(),
            "baseline": self.baseline.values.tolist(),
            "truth": self.truth.values.tolist(),
            "labels": list(self.labels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        _check_keys(d, {"topology", "baseline", "truth", "labels"}, "ground truth")
        topo = Topology.from_dict(d["topology"])
        return cls(topo, RateMatrix(topo, d["baseline"]), RateMatrix(topo, d["truth"]), tuple(d["labels"]))


def gen_ground_truth(cfg: SimConfig, rng, topology: Topology | None = None) -> GroundTruth:
    """Draw a baseline network and apply random diversions to it.

    Every ordered pair of exterior nodes is part of the estimation universe.
    Each draw consumes a fixed number of variates per pair, so outcomes for one
    pair never shift the stream for another.
    """
    topo = topology or Topology.create(cfg.n_exterior, cfg.n_interior)
    n = topo.n_pairs
    g_support = _gen(rng, "support")
    g_rates = _gen(rng, "rates")
    g_div = _gen(rng, "diversions")

    in_support = g_support.random(n) < cfg.p_edge
    b_shape, b_rate = cfg.baseline_gamma
    base_draw = g_rates.gamma(b_shape, 1.0 / b_rate, size=n)
    baseline = np.where(in_support, base_draw, 0.0)

    u_div = g_div.random(n)
    u_miss = g_div.random(n)
    d_shape, d_rate = cfg.diversion_gamma
    div_draw = g_div.gamma(d_shape, 1.0 / d_rate, size=n)

    truth = baseline.copy()
    labels = ["none"] * n
    for k in range(n):
        if u_div[k] >= cfg.p_diversion:
            continue
        if in_support[k]:
            if u_miss[k] < cfg.p_missing_given_diversion:
                truth[k] = 0.0
                labels[k] = "missing"
            else:
                truth[k] = baseline[k] + div_draw[k]
                labels[k] = "increased"
        else:
            truth[k] = div_draw[k]
            labels[k] = "new_edge"
    return GroundTruth(topo, RateMatrix(topo, baseline), RateMatrix(topo, truth), tuple(labels))


def sample_traffic(truth: GroundTruth | RateMatrix, T: int, rng) -> TrafficSeries:
    rates = truth.truth if isinstance(truth, GroundTruth) else truth
    if T < 1:
        raise ConfigurationError("T must be >= 1")
    g = _gen(rng, "traffic")
    counts = g.poisson(np.broadcast_to(rates.values, (T, rates.topology.n_pairs)))
    return TrafficSeries(rates.topology, counts)


def assign_routes(topology: Topology, n_interior: int, rng, p_route: float = 0.5) -> Topology:
    """Route each pair through one uniformly chosen interior node w.p. ``p_route``."""
    if n_interior < 0:
        raise ConfigurationError("n_interior must be nonnegative")
    if n_interior == 0:
        return topology.with_routes([()] * topology.n_pairs, n_interior=0)
    g = _gen(rng, "routes")
    use = g.random(topology.n_pairs) < p_route
    which = g.integers(0, n_interior, size=topology.n_pairs)
    routes = [(int(w),) if u else () for u, w in zip(use, which)]
    return topology.with_routes(routes, n_interior=n_interior)


def traffic_to_dict(traffic: TrafficSeries) -> dict:
    return {"T": traffic.T, "counts": traffic.counts.tolist()}


def traffic_from_dict(d: dict, topology: Topology) -> TrafficSeries:
    _check_keys(d, {"T", "counts"}, "traffic")
    ts = TrafficSeries(topology, np.array(d["counts"], dtype=np.int64).reshape(int(d["T"]), topology.n_pairs))
    return ts


def inject_diversions(baseline: RateMatrix, n_new: int, n_missing: int, rng,
                      diversion_gamma: tuple[float, float] = (0.75, 1.0)) -> GroundTruth:
    """Ground truth with a prescribed number of new and missing edges.

    New edges are drawn among pairs with zero baseline and get a rate from the
    diversion gamma; missing edges are drawn among pairs with positive
    baseline and drop to zero. Every other pair keeps its baseline.
    """
    b = baseline.values
    zero = np.flatnonzero(b == 0)
    pos = np.flatnonzero(b > 0)
    if n_new < 0 or n_missing < 0 or n_new > zero.size or n_missing > pos.size:
        raise ConfigurationError(f"cannot inject {n_new} new and {n_missing} missing edges into this baseline")
    g = _gen(rng, "diversions")
    new = np.sort(g.permutation(zero)[:n_new])
    gone = np.sort(g.permutation(pos)[:n_missing])
    shape, rate = diversion_gamma
    truth = b.copy()
    truth[new] = g.gamma(shape, 1.0 / rate, size=n_new)
    truth[gone] = 0.0
    labels = ["none"] * b.size
    for k in new:
        labels[k] = "new_edge"
    for k in gone:
        labels[k] = "missing"
    topo = baseline.topology
    return GroundTruth(topo, baseline, RateMatrix(topo, truth), tuple(labels))
