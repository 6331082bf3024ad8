"""Simulated edge network: topology, stochastic per-slot delays, placement costs.

The network consists of cameras and edge servers joined by links.  A placement
choice (an "arm") is a server together with the ingress link used to reach it.
Per-slot delays are drawn from lognormal distributions, optionally inflated by
random background tasks, and the realized cost of an arm is the link delay plus
the server delay plus a linear co-location penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import ConfigError

# Stream tag separating delay draws from every other consumer of the base seed.
_DELAY_STREAM = 0


@dataclass(frozen=True)
class Link:
    """An undirected link between two declared endpoints."""

    link_id: str
    end_a: str
    end_b: str

    def touches(self, node: str) -> bool:
        return node == self.end_a or node == self.end_b


@dataclass(frozen=True)
class Arm:
    """One placement action: run the module on `server`, reached via `link`."""

    server: str
    link: str


class NetworkTopology:
    """Cameras, servers and links, with the arm set they induce.

    Entity order (servers in declaration order, then links in declaration
    order) is fixed at construction and shared by every consumer that needs a
    stable vector layout.
    """

    def __init__(self, cameras: list[str], servers: list[str], links: list[Link]):
        if not servers:
            raise ConfigError("topology needs at least one server")
        names = list(cameras) + list(servers) + [l.link_id for l in links]
        if len(set(names)) != len(names):
            raise ConfigError("camera/server/link ids must be mutually unique")
        nodes = set(cameras) | set(servers)
        for link in links:
            for end in (link.end_a, link.end_b):
                if end not in nodes:
                    raise ConfigError(
                        f"link {link.link_id!r} references undeclared endpoint {end!r}"
                    )
        self.cameras = tuple(cameras)
        self.servers = tuple(servers)
        self.links = tuple(links)
        self.incident = {
            s: tuple(l.link_id for l in links if l.touches(s)) for s in servers
        }
        for server, incident in self.incident.items():
            if not incident:
                raise ConfigError(f"server {server!r} has no incident link")
        # Servers first, then links; the canonical layout for delay vectors.
        self.entities = tuple(servers) + tuple(l.link_id for l in links)

    def arms(self) -> list[Arm]:
        """All (server, ingress link) pairs, server-major in declaration order."""
        return [
            Arm(server=s, link=l) for s in self.servers for l in self.incident[s]
        ]

    def first_link(self, server: str) -> str:
        return self.incident[server][0]


@dataclass(frozen=True)
class DelayParams:
    """Lognormal delay: median_ms * exp(sigma * z) with z standard normal.

    sigma == 0 degenerates to the constant median_ms.
    """

    median_ms: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.median_ms) and self.median_ms > 0):
            raise ConfigError(f"median_ms must be positive and finite, got {self.median_ms}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigError(f"sigma must be non-negative and finite, got {self.sigma}")

    @property
    def mean_ms(self) -> float:
        return self.median_ms * math.exp(self.sigma**2 / 2.0)


@dataclass(frozen=True)
class BackgroundTasks:
    """Per-slot random load spikes: with `task_probability` an entity's delay is
    multiplied by a factor drawn uniformly from [inflate_min, inflate_max]."""

    task_probability: float
    inflate_min: float
    inflate_max: float

    def __post_init__(self):
        if not 0.0 <= self.task_probability <= 1.0:
            raise ConfigError("task_probability must lie in [0, 1]")
        if not (0 < self.inflate_min <= self.inflate_max):
            raise ConfigError("need 0 < inflate_min <= inflate_max")


@dataclass
class DelayModel:
    """Per-entity delay distributions plus load-penalty and capacity figures.

    `capacity` only exists so a consolidation baseline can pick "the biggest
    server"; it defaults to the reciprocal of the median processing delay.
    """

    server_delays: dict[str, DelayParams]
    link_delays: dict[str, DelayParams]
    load_penalty_ms: dict[str, float]
    capacity: dict[str, float] = field(default_factory=dict)
    background: BackgroundTasks | None = None
    dynamic: bool = False

    def __post_init__(self):
        for server, penalty in self.load_penalty_ms.items():
            if not (math.isfinite(penalty) and penalty >= 0):
                raise ConfigError(f"load penalty for {server!r} must be >= 0")
        for server, params in self.server_delays.items():
            self.capacity.setdefault(server, 1.0 / params.median_ms)
        if self.dynamic and self.background is None:
            raise ConfigError("dynamic mode requires a background-task section")

    def validate_for(self, topology: NetworkTopology) -> None:
        for s in topology.servers:
            if s not in self.server_delays:
                raise ConfigError(f"no delay parameters for server {s!r}")
            if s not in self.load_penalty_ms:
                raise ConfigError(f"no load penalty for server {s!r}")
        for l in topology.links:
            if l.link_id not in self.link_delays:
                raise ConfigError(f"no delay parameters for link {l.link_id!r}")


@dataclass(frozen=True)
class SlotObservation:
    """All entity delays for one time slot, in milliseconds."""

    slot: int
    server_delays: dict[str, float]
    link_delays: dict[str, float]

    def vector(self, topology: NetworkTopology) -> np.ndarray:
        """Delays in the topology's canonical entity order."""
        vals = [self.server_delays[s] for s in topology.servers]
        vals += [self.link_delays[l.link_id] for l in topology.links]
        return np.asarray(vals, dtype=float)


def sample_slot(
    model: DelayModel, topology: NetworkTopology, slot: int, seed: int
) -> SlotObservation:
    """Draw one slot's delays. Deterministic in (seed, slot).

    Base delays are drawn first (servers, then links, in declaration order),
    then background-task inflation is applied when dynamic mode is on.
    """
    rng = np.random.default_rng([seed, _DELAY_STREAM, slot])
    server_delays = {}
    for s in topology.servers:
        p = model.server_delays[s]
        server_delays[s] = p.median_ms * math.exp(p.sigma * rng.standard_normal())
    link_delays = {}
    for l in topology.links:
        p = model.link_delays[l.link_id]
        link_delays[l.link_id] = p.median_ms * math.exp(p.sigma * rng.standard_normal())
    if model.dynamic:
        bg = model.background
        for s in topology.servers:
            if rng.random() < bg.task_probability:
                server_delays[s] *= rng.uniform(bg.inflate_min, bg.inflate_max)
        for l in topology.links:
            if rng.random() < bg.task_probability:
                link_delays[l.link_id] *= rng.uniform(bg.inflate_min, bg.inflate_max)
    return SlotObservation(slot=slot, server_delays=server_delays, link_delays=link_delays)


def end_to_end_cost(
    obs: SlotObservation,
    arm: Arm,
    load: dict[str, int],
    penalties: dict[str, float],
) -> float:
    """Link delay + server delay + penalty * co-located load, in ms.

    `load` counts modules sharing each server *besides* the one being costed.
    """
    if arm.server not in obs.server_delays:
        raise ValueError(f"unknown server {arm.server!r} in arm")
    if arm.link not in obs.link_delays:
        raise ValueError(f"unknown link {arm.link!r} in arm")
    n = load.get(arm.server, 0)
    if n < 0:
        raise ValueError("load counts must be non-negative")
    return (
        obs.link_delays[arm.link]
        + obs.server_delays[arm.server]
        + penalties[arm.server] * n
    )


class Simulator:
    """A topology plus delay model bound to a base seed.

    observe(slot) is a pure function of (seed, slot): replaying the same slot
    returns identical delays regardless of what any learner did in between.
    """

    def __init__(self, topology: NetworkTopology, model: DelayModel, seed: int):
        model.validate_for(topology)
        self.topology = topology
        self.model = model
        self.seed = int(seed)
        self.arms = topology.arms()

    def observe(self, slot: int) -> SlotObservation:
        return sample_slot(self.model, self.topology, slot, self.seed)

    def cost(self, obs: SlotObservation, arm: Arm, load: dict[str, int] | None = None) -> float:
        return end_to_end_cost(obs, arm, load or {}, self.model.load_penalty_ms)


# ---------------------------------------------------------------------------
# Configuration files
# ---------------------------------------------------------------------------

_TOPOLOGY_KEYS = {"cameras", "servers", "links"}
_LINK_KEYS = {"id", "a", "b"}
_DELAY_FILE_KEYS = {"servers", "links", "dynamic"}
_SERVER_KEYS = {"median_ms", "mu", "sigma", "load_penalty_ms", "capacity"}
_LINK_DELAY_KEYS = {"median_ms", "mu", "sigma"}
_DYNAMIC_KEYS = {"enabled", "task_probability", "inflate_min", "inflate_max"}


def _require_mapping(obj, what: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{what} must be a mapping")
    return obj


def _reject_unknown(data: dict, allowed: set, what: str) -> None:
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"unknown keys in {what}: {sorted(extra)}")


def load_topology(path) -> NetworkTopology:
    """Read a topology file (keys: cameras, servers, links)."""
    with open(path) as fh:
        data = _require_mapping(yaml.safe_load(fh), f"topology file {path}")
    _reject_unknown(data, _TOPOLOGY_KEYS, f"topology file {path}")
    cameras = data.get("cameras") or []
    servers = data.get("servers") or []
    links = []
    for raw in data.get("links") or []:
        raw = _require_mapping(raw, "link entry")
        _reject_unknown(raw, _LINK_KEYS, f"link entry {raw.get('id')!r}")
        try:
            links.append(Link(link_id=str(raw["id"]), end_a=str(raw["a"]), end_b=str(raw["b"])))
        except KeyError as exc:
            raise ConfigError(f"link entry missing key {exc}") from None
    return NetworkTopology([str(c) for c in cameras], [str(s) for s in servers], links)


def _delay_params(raw: dict, what: str) -> DelayParams:
    if ("median_ms" in raw) == ("mu" in raw):
        raise ConfigError(f"{what}: give exactly one of median_ms or mu")
    median = float(raw["median_ms"]) if "median_ms" in raw else math.exp(float(raw["mu"]))
    return DelayParams(median_ms=median, sigma=float(raw.get("sigma", 0.0)))


def load_delay_model(path, topology: NetworkTopology | None = None) -> DelayModel:
    """Read a delay-model file (keys: servers, links, dynamic)."""
    with open(path) as fh:
        data = _require_mapping(yaml.safe_load(fh), f"delay file {path}")
    _reject_unknown(data, _DELAY_FILE_KEYS, f"delay file {path}")

    server_delays, penalties, capacity = {}, {}, {}
    for name, raw in _require_mapping(data.get("servers", {}), "servers section").items():
        raw = _require_mapping(raw, f"server {name!r}")
        _reject_unknown(raw, _SERVER_KEYS, f"server {name!r}")
        server_delays[name] = _delay_params(raw, f"server {name!r}")
        penalties[name] = float(raw.get("load_penalty_ms", 0.0))
        if "capacity" in raw:
            capacity[name] = float(raw["capacity"])
    link_delays = {}
    for name, raw in _require_mapping(data.get("links", {}), "links section").items():
        raw = _require_mapping(raw, f"link {name!r}")
        _reject_unknown(raw, _LINK_DELAY_KEYS, f"link {name!r}")
        link_delays[name] = _delay_params(raw, f"link {name!r}")

    background, dynamic = None, False
    if "dynamic" in data:
        raw = _require_mapping(data["dynamic"], "dynamic section")
        _reject_unknown(raw, _DYNAMIC_KEYS, "dynamic section")
        try:
            background = BackgroundTasks(
                task_probability=float(raw["task_probability"]),
                inflate_min=float(raw["inflate_min"]),
                inflate_max=float(raw["inflate_max"]),
            )
        except KeyError as exc:
            raise ConfigError(f"dynamic section missing key {exc}") from None
        dynamic = bool(raw.get("enabled", False))

    model = DelayModel(
        server_delays=server_delays,
        link_delays=link_delays,
        load_penalty_ms=penalties,
        capacity=capacity,
        background=background,
        dynamic=dynamic,
    )
    if topology is not None:
        model.validate_for(topology)
    return model
