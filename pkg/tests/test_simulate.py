import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from nettomo.errors import ConfigurationError
from nettomo.network import RateMatrix, Topology
from nettomo.simulate import (GroundTruth, SimConfig, Streams, assign_routes, gen_ground_truth, inject_diversions,
                              sample_traffic, traffic_from_dict, traffic_to_dict)


def test_streams_are_reproducible_and_independent():
    a = Streams(5, 2).get("traffic").random(4)
    b = Streams(5, 2).get("traffic").random(4)
    c = Streams(5, 3).get("traffic").random(4)
    d = Streams(5, 2).get("rates").random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


@given(st.integers(0, 2**64 - 1), st.integers(0, 500))
def test_ground_truth_labels_are_consistent(seed, trial):
    gt = gen_ground_truth(SimConfig(n_exterior=5, p_diversion=0.5), Streams(seed, trial))
    b, t = gt.baseline.values, gt.truth.values
    for k, lab in enumerate(gt.labels):
        if lab == "none":
            assert b[k] == t[k]
        elif lab == "new_edge":
            assert b[k] == 0 and t[k] > 0
        elif lab == "missing":
            assert b[k] > 0 and t[k] == 0
        else:
            assert t[k] > b[k] > 0


def test_no_diversions_means_truth_equals_baseline():
    gt = gen_ground_truth(SimConfig(n_exterior=6, p_diversion=0.0), Streams(1))
    assert np.array_equal(gt.baseline.values, gt.truth.values)
    assert gt.diverted() == {}


def test_baseline_does_not_depend_on_diversion_probability():
    a = gen_ground_truth(SimConfig(n_exterior=6, p_diversion=0.0), Streams(9, 4))
    b = gen_ground_truth(SimConfig(n_exterior=6, p_diversion=0.9), Streams(9, 4))
    assert np.array_equal(a.baseline.values, b.baseline.values)


def test_simulation_moments():
    # support fraction near p_edge and gamma(1.75, 1) mean on the support
    cfg = SimConfig(n_exterior=10, p_diversion=0.0)
    vals = np.concatenate([gen_ground_truth(cfg, Streams(0, t)).baseline.values for t in range(200)])
    assert abs(np.mean(vals > 0) - 0.65) < 0.02
    assert abs(vals[vals > 0].mean() - 1.75) < 0.05


def test_traffic_is_poisson_with_truth_means():
    gt = gen_ground_truth(SimConfig(n_exterior=4), Streams(3))
    tr = sample_traffic(gt, 20_000, Streams(3))
    assert np.allclose(tr.counts.mean(axis=0), gt.truth.values, atol=0.05)
    assert np.all(tr.counts[:, gt.truth.values == 0] == 0)


def test_traffic_prefix_property():
    # a longer series extends a shorter one: different T reuse the same draws
    gt = gen_ground_truth(SimConfig(n_exterior=4), Streams(3))
    a = sample_traffic(gt, 10, Streams(3)).counts
    b = sample_traffic(gt, 25, Streams(3)).counts
    assert np.array_equal(a, b[:10])


def test_routes():
    topo = Topology.create(4)
    assert all(r == () for r in assign_routes(topo, 0, Streams(0)).routes)
    routed = assign_routes(topo, 2, Streams(0), p_route=1.0)
    assert routed.n_interior == 2 and all(len(r) == 1 for r in routed.routes)


def test_inject_diversions():
    base = gen_ground_truth(SimConfig(n_exterior=6, p_diversion=0.0), Streams(2)).baseline
    gt = inject_diversions(base, 2, 1, Streams(2))
    d = gt.diverted()
    assert sorted(d.values()) == ["missing", "new_edge", "new_edge"]
    with pytest.raises(ConfigurationError):
        inject_diversions(base, 100, 0, Streams(2))


@pytest.mark.parametrize("kw", [dict(n_exterior=1), dict(p_edge=1.5), dict(T=0), dict(baseline_gamma=(0, 1)),
                                dict(seed=-1), dict(n_interior=-1)])
def test_config_validation(kw):
    with pytest.raises(ConfigurationError):
        SimConfig(**kw)


def test_round_trips():
    cfg = SimConfig(n_exterior=5, seed=7)
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ConfigurationError, match="nodes"):
        SimConfig.from_dict({"nodes": 3})
    gt = gen_ground_truth(cfg, Streams(7))
    assert GroundTruth.from_dict(gt.to_dict()).to_dict() == gt.to_dict()
    tr = sample_traffic(gt, 5, Streams(7))
    assert np.array_equal(traffic_from_dict(traffic_to_dict(tr), gt.topology).counts, tr.counts)


def test_ground_truth_invariants_enforced():
    topo = Topology.create(2)
    with pytest.raises(ConfigurationError):
        GroundTruth(topo, RateMatrix(topo, [1.0, 1.0]), RateMatrix(topo, [2.0, 1.0]), ("none", "none"))
    with pytest.raises(ConfigurationError):
        GroundTruth(topo, RateMatrix(topo, [1.0, 1.0]), RateMatrix(topo, [1.0, 1.0]), ("missing", "none"))
