"""Network topology, rates, traffic and the node-level observation operator.

Exterior nodes are indexed ``0..n_exterior-1`` and interior nodes
``0..n_interior-1``.  A source-destination pair ``(i, j)`` is a directed pair of
distinct exterior nodes; every vectorisation in the package uses the
lexicographic order of ``Topology.pairs``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, ContractError

Pair = tuple[int, int]

ROW_KINDS = ("egress", "ingress", "flow", "edge")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Topology:
    n_exterior: int
    n_interior: int
    pairs: tuple[Pair, ...]
    routes: tuple[tuple[int, ...], ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_exterior < 1:
            raise ConfigurationError("n_exterior must be positive")
        if self.n_interior < 0:
            raise ConfigurationError("n_interior must be nonnegative")
        pairs = tuple((int(i), int(j)) for i, j in self.pairs)
        routes = tuple(tuple(int(u) for u in r) for r in self.routes)
        if len(routes) != len(pairs):
            raise ConfigurationError("one route is required per pair")
        if list(pairs) != sorted(set(pairs)):
            raise ConfigurationError("pairs must be unique and in lexicographic order")
        for i, j in pairs:
            if i == j:
                raise ConfigurationError(f"self-pair ({i}, {j})")
            if not (0 <= i < self.n_exterior and 0 <= j < self.n_exterior):
                raise ConfigurationError(f"pair ({i}, {j}) references an unknown exterior node")
        for p, r in zip(pairs, routes):
            for u in r:
                if not 0 <= u < self.n_interior:
                    raise ConfigurationError(f"route of {p} references unknown interior node {u}")
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "routes", routes)
        object.__setattr__(self, "_index", {p: k for k, p in enumerate(pairs)})

    @classmethod
    def create(cls, n_exterior, n_interior=0, pairs=None, routes=None):
        """Build a topology, sorting pairs and defaulting to all ordered pairs."""
        if pairs is None:
            pairs = list(permutations(range(n_exterior), 2))
        pairs = [tuple(p) for p in pairs]
        routes = dict(routes or {})
        unknown = set(routes) - set(pairs)
        if unknown:
            raise ConfigurationError(f"routes given for unknown pairs {sorted(unknown)}")
        pairs = sorted(pairs)
        return cls(n_exterior, n_interior, tuple(pairs), tuple(tuple(routes.get(p, ())) for p in pairs))

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def index(self, pair: Pair) -> int:
        try:
            return self._index[tuple(pair)]
        except KeyError:
            raise ConfigurationError(f"unknown pair {tuple(pair)}") from None

    def with_routes(self, routes: Sequence[Sequence[int]], n_interior: int | None = None) -> "Topology":
        return Topology(self.n_exterior, self.n_interior if n_interior is None else n_interior,
                        self.pairs, tuple(tuple(r) for r in routes))

    def to_dict(self) -> dict:
        return {
            "n_exterior": self.n_exterior,
            "n_interior": self.n_interior,
            "pairs": [list(p) for p in self.pairs],
            "routes": [list(r) for r in self.routes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        _check_keys(d, {"n_exterior", "n_interior", "pairs", "routes"}, "topology")
        return cls(int(d["n_exterior"]), int(d["n_interior"]),
                   tuple(tuple(p) for p in d["pairs"]), tuple(tuple(r) for r in d["routes"]))


@dataclass(frozen=True)
class RateMatrix:
    """Nonnegative Poisson rates, one per pair of ``topology``."""

    topology: Topology
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values, float)
        if v.shape != (self.topology.n_pairs,):
            raise ContractError(f"expected {self.topology.n_pairs} rates, got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ContractError("rates must be finite and nonnegative")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_mapping(cls, topology: Topology, rates: dict) -> "RateMatrix":
        v = np.zeros(topology.n_pairs)
        for p, r in rates.items():
            v[topology.index(p)] = r
        return cls(topology, v)

    def __getitem__(self, pair: Pair) -> float:
        return float(self.values[self.topology.index(pair)])

    def as_dense(self) -> np.ndarray:
        n = self.topology.n_exterior
        out = np.zeros((n, n))
        for (i, j), v in zip(self.topology.pairs, self.values):
            out[i, j] = v
        return out

    def to_list(self) -> list[list]:
        return [[i, j, float(v)] for (i, j), v in zip(self.topology.pairs, self.values)]


@dataclass(frozen=True)
class TrafficSeries:
    """Integer message counts ``counts[t, p]`` for ticks ``t`` and pairs ``p``."""

    topology: Topology
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 2 or c.shape[1] != self.topology.n_pairs or c.shape[0] < 1:
            raise ContractError(f"counts must have shape (T>=1, {self.topology.n_pairs}), got {c.shape}")
        if c.size and (np.any(c < 0) or not np.all(np.equal(np.mod(c, 1), 0))):
            raise ContractError("counts must be nonnegative integers")
        object.__setattr__(self, "counts", _frozen(c, np.int64))

    @property
    def T(self) -> int:
        return self.counts.shape[0]


@dataclass(frozen=True)
class ObservationScheme:
    monitor_egress: tuple[bool, ...]
    monitor_ingress: tuple[bool, ...]
    monitor_flows: tuple[bool, ...]
    observed_pairs: tuple[Pair, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "monitor_egress", tuple(bool(b) for b in self.monitor_egress))
        object.__setattr__(self, "monitor_ingress", tuple(bool(b) for b in self.monitor_ingress))
        object.__setattr__(self, "monitor_flows", tuple(bool(b) for b in self.monitor_flows))
        object.__setattr__(self, "observed_pairs", tuple(sorted(tuple(int(x) for x in p) for p in self.observed_pairs)))

    @classmethod
    def nodes_only(cls, topology: Topology, observed_pairs: Iterable[Pair] = ()) -> "ObservationScheme":
        """Every node monitored, plus optionally some directly observed pairs."""
        n, u = topology.n_exterior, topology.n_interior
        return cls((True,) * n, (True,) * n, (True,) * u, tuple(observed_pairs))

    def to_dict(self) -> dict:
        return {
            "monitor_egress": list(self.monitor_egress),
            "monitor_ingress": list(self.monitor_ingress),
            "monitor_flows": list(self.monitor_flows),
            "observed_pairs": [list(p) for p in self.observed_pairs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObservationScheme":
        _check_keys(d, {"monitor_egress", "monitor_ingress", "monitor_flows", "observed_pairs"}, "scheme")
        return cls(tuple(d["monitor_egress"]), tuple(d["monitor_ingress"]),
                   tuple(d["monitor_flows"]), tuple(tuple(p) for p in d.get("observed_pairs", ())))


@dataclass(frozen=True)
class ObservationOperator:
    """Binary map from pair counts to observables.

    ``rows[r]`` is ``(kind, key)`` where ``key`` is a node index for egress,
    ingress and flow rows and a pair for edge rows.
    """

    topology: Topology
    rows: tuple[tuple, ...]
    matrix: np.ndarray

    def __post_init__(self):
        m = _frozen(self.matrix, np.int64)
        if m.shape != (len(self.rows), self.topology.n_pairs):
            raise ContractError("operator matrix shape does not match rows x pairs")
        if np.any((m != 0) & (m != 1)):
            raise ContractError("operator entries must be 0 or 1")
        object.__setattr__(self, "matrix", m)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """Row pointer and pair indices of the nonzeros, row by row."""
        counts = self.matrix.sum(axis=1)
        indptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        indices = np.nonzero(self.matrix)[1].astype(np.int64)
        return indptr, indices

    def row_labels(self) -> list[str]:
        out = []
        for kind, key in self.rows:
            out.append(f"{kind}({key[0]},{key[1]})" if kind == "edge" else f"{kind}({key})")
        return out


@dataclass(frozen=True)
class ObservationSeries:
    rows: tuple[tuple, ...]
    y: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y)
        if y.ndim != 2 or y.shape[1] != len(self.rows) or y.shape[0] < 1:
            raise ContractError(f"y must have shape (T>=1, {len(self.rows)}), got {y.shape}")
        if np.any(y < 0):
            raise ContractError("observations must be nonnegative")
        object.__setattr__(self, "y", _frozen(y, np.int64))

    @property
    def T(self) -> int:
        return self.y.shape[0]

    def mean(self) -> np.ndarray:
        return self.y.mean(axis=0)


def build_operator(topology: Topology, scheme: ObservationScheme) -> ObservationOperator:
    n, u = topology.n_exterior, topology.n_interior
    if len(scheme.monitor_egress) != n or len(scheme.monitor_ingress) != n:
        raise ConfigurationError(f"egress/ingress monitors must list {n} exterior nodes")
    if len(scheme.monitor_flows) != u:
        raise ConfigurationError(f"flow monitors must list {u} interior nodes")
    src = np.array([p[0] for p in topology.pairs], dtype=np.int64)
    dst = np.array([p[1] for p in topology.pairs], dtype=np.int64)
    rows, mat = [], []
    for i in range(n):
        if scheme.monitor_egress[i]:
            rows.append(("egress", i))
            mat.append(src == i)
    for j in range(n):
        if scheme.monitor_ingress[j]:
            rows.append(("ingress", j))
            mat.append(dst == j)
    for k in range(u):
        if scheme.monitor_flows[k]:
            rows.append(("flow", k))
            mat.append(np.array([k in r for r in topology.routes], dtype=bool))
    for p in scheme.observed_pairs:
        idx = topology.index(p)
        e = np.zeros(topology.n_pairs, dtype=bool)
        e[idx] = True
        rows.append(("edge", tuple(p)))
        mat.append(e)
    matrix = np.array(mat, dtype=np.int64).reshape(len(rows), topology.n_pairs)
    return ObservationOperator(topology, tuple(rows), matrix)


def apply_operator(op: ObservationOperator, traffic: TrafficSeries) -> ObservationSeries:
    if traffic.topology.pairs != op.topology.pairs:
        raise ContractError("traffic pairs do not match operator columns")
    return ObservationSeries(op.rows, traffic.counts @ op.matrix.T)


def expected_observations(op: ObservationOperator, rates: RateMatrix | np.ndarray) -> np.ndarray:
    v = rates.values if isinstance(rates, RateMatrix) else np.asarray(rates, dtype=float)
    if v.shape != (op.topology.n_pairs,):
        raise ContractError("rate vector length does not match operator columns")
    return op.matrix @ v


def rows_to_json(rows) -> list:
    return [[kind, list(key) if kind == "edge" else key] for kind, key in rows]


def rows_from_json(rows) -> tuple:
    out = []
    for kind, key in rows:
        if kind not in ROW_KINDS:
            raise ConfigurationError(f"unknown row kind {kind!r}")
        out.append((kind, tuple(key) if kind == "edge" else int(key)))
    return tuple(out)


def _check_keys(d: dict, allowed: set, where: str):
    extra = set(d) - allowed
    if extra:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(sorted(extra))}")
