"""Strict JSON run configuration shared by the command-line tools.

A config file is one JSON object with up to five sections, each optional::

    {
      "sim": {...SimConfig fields...},
      "scheme": {"monitor_egress": true, "monitor_ingress": true,
                 "monitor_flows": true, "observed_pairs": [], "observed_fraction": 0.0},
      "estimators": {"default": {...EstimatorSettings...}, "hipois": {...}},
      "detect": {"target_fpr": 0.05, "edge_tol": 0.1, "n_null": null},
      "study": {...ExperimentSpec sweep fields...}
    }

Unknown keys anywhere raise :class:`~nettomo.errors.ConfigurationError`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError
from .estimators import ESTIMATORS, EstimatorSettings
from .experiments import ExperimentSpec, desk_spec, paper_spec
from .network import ObservationScheme, Topology, _check_keys
from .simulate import SimConfig

SECTIONS = {"sim", "scheme", "estimators", "detect", "study"}
SCHEME_KEYS = {"monitor_egress", "monitor_ingress", "monitor_flows", "observed_pairs", "observed_fraction"}
DETECT_KEYS = {"target_fpr", "edge_tol", "n_null"}
# study fields a config may set; seed, sim, settings and detection come from elsewhere
STUDY_KEYS = {"fractions", "T_values", "estimators", "init_modes", "trials", "p_arm", "inject_new", "inject_missing"}


@dataclass(frozen=True)
class SchemeConfig:
    """Which monitors exist; lengths are resolved against a topology later."""

    monitor_egress: object = True
    monitor_ingress: object = True
    monitor_flows: object = True
    observed_pairs: tuple = ()
    observed_fraction: float = 0.0

    def __post_init__(self):
        for name in ("monitor_egress", "monitor_ingress", "monitor_flows"):
            v = getattr(self, name)
            if isinstance(v, list):
                object.__setattr__(self, name, tuple(v))
            elif not isinstance(v, (bool, tuple)):
                raise ConfigurationError(f"scheme.{name} must be a boolean or a list of booleans")
        object.__setattr__(self, "observed_pairs", tuple(tuple(int(x) for x in p) for p in self.observed_pairs))
        if not 0.0 <= float(self.observed_fraction) <= 1.0:
            raise ConfigurationError("scheme.observed_fraction must lie in [0, 1]")
        if self.observed_pairs and self.observed_fraction:
            raise ConfigurationError("give either scheme.observed_pairs or scheme.observed_fraction, not both")

    def resolve(self, topology: Topology, extra_pairs=()) -> ObservationScheme:
        def expand(v, n, name):
            if isinstance(v, bool):
                return (v,) * n
            if len(v) != n:
                raise ConfigurationError(f"scheme.{name} lists {len(v)} entries, topology has {n}")
            return tuple(bool(b) for b in v)

        pairs = tuple(self.observed_pairs) + tuple(extra_pairs)
        for p in pairs:
            if p not in topology.pairs:
                raise ConfigurationError(f"scheme.observed_pairs entry {list(p)} is not a pair of this topology")
        return ObservationScheme(expand(self.monitor_egress, topology.n_exterior, "monitor_egress"),
                                 expand(self.monitor_ingress, topology.n_exterior, "monitor_ingress"),
                                 expand(self.monitor_flows, topology.n_interior, "monitor_flows"), pairs)

    def to_dict(self) -> dict:
        def out(v):
            return v if isinstance(v, bool) else list(v)

        return {"monitor_egress": out(self.monitor_egress), "monitor_ingress": out(self.monitor_ingress),
                "monitor_flows": out(self.monitor_flows), "observed_pairs": [list(p) for p in self.observed_pairs],
                "observed_fraction": float(self.observed_fraction)}


@dataclass(frozen=True)
class DetectConfig:
    target_fpr: float = 0.05
    edge_tol: float = 0.1
    n_null: int | None = None  # None: the study's own default

    def __post_init__(self):
        if not 0.0 < self.target_fpr < 1.0:
            raise ConfigurationError("detect.target_fpr must lie in (0, 1)")
        if self.edge_tol < 0:
            raise ConfigurationError("detect.edge_tol must be nonnegative")
        if self.n_null is not None and self.n_null < 20:
            raise ConfigurationError("detect.n_null must be at least 20")


@dataclass(frozen=True)
class RunConfig:
    sim: SimConfig | None = None
    scheme: SchemeConfig = field(default_factory=SchemeConfig)
    estimators: dict = field(default_factory=dict)
    detect: DetectConfig = field(default_factory=DetectConfig)
    study: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("config must be a JSON object")
        _check_keys(d, SECTIONS, "config")
        sim = SimConfig.from_dict(_section(d, "sim")) if "sim" in d else None
        sch = _section(d, "scheme")
        _check_keys(sch, SCHEME_KEYS, "scheme")
        est = {}
        for tag, body in _section(d, "estimators").items():
            if tag != "default" and tag not in ESTIMATORS:
                raise ConfigurationError(f"unknown key(s) in estimators: {tag}")
            est[tag] = EstimatorSettings.from_dict(_section({tag: body}, tag, where="estimators"))
        det = _section(d, "detect")
        _check_keys(det, DETECT_KEYS, "detect")
        study = _section(d, "study")
        _check_keys(study, STUDY_KEYS, "study")
        try:
            return cls(sim, SchemeConfig(**sch), est, DetectConfig(**det), dict(study))
        except TypeError as e:
            raise ConfigurationError(str(e)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        """Read a config file; ``None`` gives all defaults."""
        if path is None:
            return cls()
        text = Path(path).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"{path}: invalid JSON: {e}") from None
        return cls.from_dict(doc)

    def sim_config(self, seed: int | None = None, paper_scale: bool = False) -> SimConfig:
        base = self.sim or SimConfig(n_exterior=10 if paper_scale else 6)
        return base if seed is None else base.replace(seed=int(seed))

    def settings_for(self, tag: str, seed: int | None = None) -> EstimatorSettings:
        s = self.estimators.get(tag, self.estimators.get("default", EstimatorSettings()))
        return s if seed is None else s.replace(seed=int(seed))

    def experiment(self, name: str, seed: int | None = None, paper_scale: bool = False) -> ExperimentSpec:
        """The study spec: built-in grid, then config overrides, then flags."""
        make = paper_spec if paper_scale else desk_spec
        kw = dict(self.study)
        for k in ("fractions", "T_values", "estimators", "init_modes"):
            if k in kw:
                kw[k] = tuple(kw[k])
        if self.sim is not None:
            kw["sim"] = self.sim
        default = self.estimators.get("default", EstimatorSettings())
        kw["settings"] = default
        kw["overrides"] = {k: v for k, v in self.estimators.items() if k != "default"}
        kw["target_fpr"] = self.detect.target_fpr
        kw["edge_tol"] = self.detect.edge_tol
        if self.detect.n_null is not None:
            kw["n_null"] = self.detect.n_null
        if seed is not None:
            kw["seed"] = int(seed)
        elif self.sim is not None and name != "single_instance":
            kw["seed"] = int(self.sim.seed)
        try:
            return make(name, **kw)
        except TypeError as e:
            raise ConfigurationError(str(e)) from None


def _section(d: dict, key: str, where: str = "config") -> dict:
    v = d.get(key, {})
    if not isinstance(v, dict):
        raise ConfigurationError(f"{where}.{key} must be a JSON object")
    return v
