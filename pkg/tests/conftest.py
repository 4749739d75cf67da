import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from nettomo.network import ObservationScheme, Topology, build_operator

settings.register_profile("nettomo", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("nettomo")


@pytest.fixture
def two_by_two():
    """Sources {0, 1} talk to sinks {2, 3}; margins egress (2, 1), ingress (1, 2)."""
    topo = Topology.create(4, pairs=[(0, 2), (0, 3), (1, 2), (1, 3)])
    scheme = ObservationScheme((True, True, False, False), (False, False, True, True), ())
    return topo, build_operator(topo, scheme), np.array([2, 1, 1, 2])


def small_topologies():
    """All-pairs topologies on 2 and 3 exterior nodes, with and without one interior node."""
    out = []
    for n in (2, 3):
        t = Topology.create(n)
        out.append(t)
        routes = [(0,) if k % 2 == 0 else () for k in range(t.n_pairs)]
        out.append(t.with_routes(routes, n_interior=1))
    return out
