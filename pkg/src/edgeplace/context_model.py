"""Delay discretization and the bounded memory of collected data points.

Raw per-entity delays are mapped onto integer levels 1..L using uniform-width
bins fitted from observed extrema.  The resulting level vector (servers first,
then links) is the context a placement policy conditions on.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .mec_sim import Arm, NetworkTopology, Simulator, SlotObservation

DEFAULT_CAPACITY = 100_000

# Stream tag for the uniform arm picks of the collection phase.
_COLLECT_STREAM = 1

Context = tuple[int, ...]


@dataclass(frozen=True)
class LevelBounds:
    """Per-entity [lower, upper] delay ranges backing an L-level discretization."""

    entities: tuple[str, ...]
    lower: np.ndarray
    upper: np.ndarray
    levels: int

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("need at least one level")
        if len(self.lower) != len(self.entities) or len(self.upper) != len(self.entities):
            raise ValueError("bounds length does not match entity list")
        if np.any(self.upper < self.lower):
            raise ValueError("upper bounds must not be below lower bounds")


def discretize(obs: SlotObservation | np.ndarray, bounds: LevelBounds,
               topology: NetworkTopology | None = None) -> Context:
    """Map raw delays onto levels 1..L; out-of-range values clamp to 1 or L.

    Accepts either a SlotObservation (with the topology to order it) or a
    delay vector already in canonical entity order.
    """
    if isinstance(obs, SlotObservation):
        if topology is None:
            raise ValueError("topology required to order a SlotObservation")
        values = obs.vector(topology)
    else:
        values = np.asarray(obs, dtype=float)
    if values.shape != (len(bounds.entities),):
        raise ValueError(
            f"expected {len(bounds.entities)} delays, got {values.shape}"
        )
    span = bounds.upper - bounds.lower
    width = span / bounds.levels
    levels = np.ones(len(values), dtype=int)
    nonzero = width > 0
    raw = np.floor_divide(values[nonzero] - bounds.lower[nonzero], width[nonzero])
    levels[nonzero] = 1 + raw.astype(int)
    return tuple(int(l) for l in np.clip(levels, 1, bounds.levels))


class Memory:
    """Ring buffer of (slot, delays, arm, cost) points with running cost extrema.

    Entries keep the raw delay vector; contexts are attached once bounds exist
    so the same data can be re-discretized after a bounds refit.
    """

    def __init__(self, entities: tuple[str, ...], n_arms: int,
                 capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ConfigError("memory capacity must be positive")
        if n_arms < 1:
            raise ConfigError("memory needs a positive arm count")
        self.entities = tuple(entities)
        self.n_arms = int(n_arms)
        self.capacity = int(capacity)
        self._slots: deque[int] = deque()
        self._delays: deque[np.ndarray] = deque()
        self._arms: deque[int] = deque()
        self._costs: deque[float] = deque()
        self._contexts: deque[Context | None] = deque()
        self._cost_min = np.inf
        self._cost_max = -np.inf

    def __len__(self) -> int:
        return len(self._costs)

    @property
    def cost_min(self) -> float:
        return self._cost_min

    @property
    def cost_max(self) -> float:
        return self._cost_max

    def append(self, slot: int, delays: np.ndarray, arm: int, cost: float,
               context: Context | None = None) -> None:
        delays = np.asarray(delays, dtype=float)
        if delays.shape != (len(self.entities),):
            raise ValueError("delay vector does not match entity list")
        if not 0 <= arm < self.n_arms:
            raise ValueError(f"arm index {arm} outside [0, {self.n_arms})")
        if not np.isfinite(cost):
            raise ValueError("cost must be finite")
        if len(self._costs) == self.capacity:
            evicted = self._costs.popleft()
            self._slots.popleft()
            self._delays.popleft()
            self._arms.popleft()
            self._contexts.popleft()
            if evicted in (self._cost_min, self._cost_max):
                self._recompute_extrema()
        self._slots.append(int(slot))
        self._delays.append(delays)
        self._arms.append(int(arm))
        self._costs.append(float(cost))
        self._contexts.append(context)
        self._cost_min = min(self._cost_min, float(cost))
        self._cost_max = max(self._cost_max, float(cost))

    def _recompute_extrema(self) -> None:
        if self._costs:
            self._cost_min = min(self._costs)
            self._cost_max = max(self._costs)
        else:
            self._cost_min, self._cost_max = np.inf, -np.inf

    def delay_matrix(self) -> np.ndarray:
        if not self._delays:
            raise ValueError("memory is empty")
        return np.stack(tuple(self._delays))

    def attach_contexts(self, bounds: LevelBounds) -> None:
        """(Re)discretize every stored point under the given bounds."""
        if bounds.entities != self.entities:
            raise ValueError("bounds entity order does not match memory")
        fresh = deque(discretize(d, bounds) for d in self._delays)
        self._contexts = fresh

    def points(self):
        """Iterate (slot, delays, arm, cost, context) oldest first."""
        return zip(self._slots, self._delays, self._arms, self._costs, self._contexts)


def fit_bounds(memory: Memory, levels: int) -> LevelBounds:
    """Per-entity delay extrema over everything in memory, split into L bins."""
    if len(memory) == 0:
        raise ValueError("cannot fit bounds on an empty memory")
    mat = memory.delay_matrix()
    return LevelBounds(
        entities=memory.entities,
        lower=mat.min(axis=0),
        upper=mat.max(axis=0),
        levels=int(levels),
    )


def collect(sim: Simulator, n_rounds: int, seed: int,
            capacity: int = DEFAULT_CAPACITY) -> Memory:
    """Uniform-arm data collection over slots 0..n_rounds-1 (single module,
    no co-location load)."""
    if n_rounds < 1:
        raise ConfigError("collection needs at least one round")
    if n_rounds > capacity:
        raise ConfigError(
            f"collection rounds ({n_rounds}) exceed memory capacity ({capacity})"
        )
    arms = sim.arms
    memory = Memory(sim.topology.entities, n_arms=len(arms), capacity=capacity)
    rng = np.random.default_rng([seed, _COLLECT_STREAM])
    for slot in range(n_rounds):
        obs = sim.observe(slot)
        arm_idx = int(rng.integers(len(arms)))
        cost = sim.cost(obs, arms[arm_idx])
        memory.append(slot, obs.vector(sim.topology), arm_idx, cost)
    return memory


# ---------------------------------------------------------------------------
# Line-oriented memory log
# ---------------------------------------------------------------------------

def save_log(memory: Memory, path, arms: list[Arm]) -> None:
    """Write one data point per line: slot, per-entity delays, arm, cost."""
    with open(path, "w") as fh:
        header = ["slot", *memory.entities, "arm_server", "arm_link", "cost_ms"]
        fh.write(",".join(header) + "\n")
        for slot, delays, arm, cost, _ in memory.points():
            cells = [str(slot)]
            cells += [repr(float(d)) for d in delays]
            cells += [arms[arm].server, arms[arm].link, repr(float(cost))]
            fh.write(",".join(cells) + "\n")


def load_log(path, topology: NetworkTopology,
             capacity: int = DEFAULT_CAPACITY) -> Memory:
    """Rebuild a Memory from a log written by save_log."""
    arms = topology.arms()
    index = {(a.server, a.link): i for i, a in enumerate(arms)}
    memory = Memory(topology.entities, n_arms=len(arms), capacity=capacity)
    with open(path) as fh:
        header = fh.readline().rstrip("\n").split(",")
        expected = ["slot", *topology.entities, "arm_server", "arm_link", "cost_ms"]
        if header != expected:
            raise ConfigError(f"memory log {path} does not match the topology")
        for line in fh:
            cells = line.rstrip("\n").split(",")
            slot = int(cells[0])
            delays = np.array([float(c) for c in cells[1 : 1 + len(topology.entities)]])
            server, link = cells[-3], cells[-2]
            try:
                arm = index[(server, link)]
            except KeyError:
                raise ConfigError(f"unknown arm ({server}, {link}) in {path}") from None
            memory.append(slot, delays, arm, float(cells[-1]))
    return memory
