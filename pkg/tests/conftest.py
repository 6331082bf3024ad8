"""Shared builders for small test networks."""

import pytest

from edgeplace.mec_sim import (
    DelayModel,
    DelayParams,
    Link,
    NetworkTopology,
    Simulator,
)


def make_topology(n_servers: int = 2, extra_links: int = 0) -> NetworkTopology:
    """One camera fanned out to n_servers; extra links double up on server 0."""
    servers = [f"s{i}" for i in range(n_servers)]
    links = [Link(f"e{i}", "cam0", s) for i, s in enumerate(servers)]
    for j in range(extra_links):
        links.append(Link(f"x{j}", "cam0", servers[0]))
    return NetworkTopology(cameras=["cam0"], servers=servers, links=links)


def make_model(topology: NetworkTopology, medians=None, sigmas=None,
               link_median: float = 5.0, link_sigma: float = 0.0,
               penalty: float = 2.0) -> DelayModel:
    servers = topology.servers
    medians = medians or {s: 10.0 for s in servers}
    sigmas = sigmas or {s: 0.0 for s in servers}
    return DelayModel(
        server_delays={s: DelayParams(medians[s], sigmas[s]) for s in servers},
        link_delays={
            l.link_id: DelayParams(link_median, link_sigma) for l in topology.links
        },
        load_penalty_ms={s: penalty for s in servers},
    )


@pytest.fixture
def two_server_sim() -> Simulator:
    topo = make_topology(2)
    model = make_model(
        topo,
        medians={"s0": 10.0, "s1": 14.0},
        sigmas={"s0": 0.3, "s1": 0.3},
        link_sigma=0.2,
    )
    return Simulator(topo, model, seed=11)
