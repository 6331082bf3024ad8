"""Online placement learning over a fixed policy set.

Each round either explores (uniform arm, weights untouched) or exploits:
policies are sampled in proportion to their weights, the sampled policy's arm
is played, and every policy that would have recommended the played arm is
charged an importance-weighted cost estimate through a multiplicative weight
update.  Periodically all but the heaviest policy are retrained from the
growing memory, inheriting the weights of the policies they replace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .context_model import (
    Context,
    DEFAULT_CAPACITY,
    LevelBounds,
    Memory,
    discretize,
    fit_bounds,
)
from .errors import ConfigError
from .mec_sim import Arm, Simulator
from .policy_gen import (
    Policy,
    TrainingStrategy,
    build_dataset,
    default_strategies,
    generate_policies,
    train_policy,
)

# Stream tag for per-agent decision randomness.
_AGENT_STREAM = 2

# Below this largest weight the whole table is rescaled to dodge underflow;
# rescaling by a common factor leaves every sampling probability unchanged.
_UNDERFLOW_FLOOR = 1e-250


def default_gamma(horizon: int) -> float:
    """Exploration rate: min(0.05, 1/sqrt(T))."""
    return min(0.05, 1.0 / math.sqrt(horizon))


def default_eps_update(horizon: int, n_arms: int, n_policies: int) -> float:
    """Learning rate sqrt(ln|policies| / (3 T |arms|)), clamped into (0, 1/2)."""
    numerator = math.log(max(n_policies, 2))
    value = math.sqrt(numerator / (3.0 * horizon * n_arms))
    return min(max(value, 1e-6), 0.499)


@dataclass
class WeightTable:
    """Per-policy weights plus the two learning-rate knobs."""

    weights: dict[str, float]
    gamma: float
    eps_update: float

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 < self.eps_update < 0.5:
            raise ValueError(f"eps_update must lie in (0, 1/2), got {self.eps_update}")
        for pid, w in self.weights.items():
            if not (math.isfinite(w) and w > 0):
                raise ValueError(f"weight for {pid!r} must be positive, got {w}")


def policy_distribution(table: WeightTable) -> dict[str, float]:
    """Weights normalized to a probability distribution over policies."""
    if not table.weights:
        raise ValueError("weight table is empty")
    total = sum(table.weights.values())
    return {pid: w / total for pid, w in table.weights.items()}


def arm_distribution(
    probs: dict[str, float],
    policies: list[Policy],
    context: Context,
    n_arms: int,
    predictions: list[int] | None = None,
) -> np.ndarray:
    """Probability each arm gets played: mass of the policies recommending it."""
    if predictions is None:
        predictions = [p.predict(context) for p in policies]
    q = np.zeros(n_arms)
    for policy, arm in zip(policies, predictions):
        q[arm] += probs[policy.policy_id]
    return q


def normalize_cost(raw: float, cost_min: float, cost_max: float) -> float:
    """Affine map of raw cost onto [0, 1] under the given extrema (clamped)."""
    if cost_max < cost_min:
        raise ValueError("cost_max below cost_min")
    if cost_max == cost_min:
        return 0.0
    return float(np.clip((raw - cost_min) / (cost_max - cost_min), 0.0, 1.0))


def fake_costs(chosen: int, cost: float, q: np.ndarray) -> np.ndarray:
    """Importance-weighted cost vector: cost/q at the played arm, zero elsewhere."""
    if not -1e-9 <= cost <= 1.0 + 1e-9:
        raise ValueError(f"normalized cost outside [0, 1]: {cost}")
    if q[chosen] <= 0.0:
        raise ValueError(f"played arm {chosen} has zero sampling probability")
    fake = np.zeros(len(q))
    fake[chosen] = cost / q[chosen]
    return fake


def update_weights(
    table: WeightTable,
    fake: np.ndarray,
    policies: list[Policy],
    context: Context,
    predictions: list[int] | None = None,
) -> WeightTable:
    """Multiply each weight by (1 - eps)^(fake cost of that policy's arm)."""
    if predictions is None:
        predictions = [p.predict(context) for p in policies]
    decay = 1.0 - table.eps_update
    fresh = {}
    for policy, arm in zip(policies, predictions):
        fresh[policy.policy_id] = table.weights[policy.policy_id] * decay ** fake[arm]
    return WeightTable(weights=fresh, gamma=table.gamma, eps_update=table.eps_update)


@dataclass
class Choice:
    """One pending decision, waiting for its realized cost."""

    slot: int
    context: Context
    delays: np.ndarray
    explored: bool
    arm: int
    policy_index: int | None
    predictions: list[int] | None
    p: np.ndarray | None
    q: np.ndarray | None


@dataclass
class RoundOutcome:
    """The trace record of one completed round."""

    slot: int
    agent: int
    explored: bool
    policy_id: str | None
    arm: int
    raw_cost: float
    norm_cost: float
    p: np.ndarray | None = None
    q: np.ndarray | None = None


class OnlineLearner:
    """Weighted policy selection with exploration, for one placed module."""

    def __init__(
        self,
        policies: list[Policy],
        strategies: list[tuple[float, TrainingStrategy]],
        memory: Memory,
        bounds: LevelBounds,
        topology,
        gamma: float,
        eps_update: float,
        rng: np.random.Generator,
        agent: int = 0,
    ):
        if len(policies) != len(strategies):
            raise ValueError("policies and strategies must align")
        self.policies = list(policies)
        self.strategies = list(strategies)
        self.memory = memory
        self.bounds = bounds
        self.topology = topology
        self.table = WeightTable(
            weights={p.policy_id: 1.0 for p in policies},
            gamma=gamma,
            eps_update=eps_update,
        )
        self.rng = rng
        self.agent = agent
        self.generation = 0

    @property
    def n_arms(self) -> int:
        return self.memory.n_arms

    def context_of(self, obs) -> Context:
        return discretize(obs, self.bounds, self.topology)

    def choose(self, obs) -> Choice:
        """Pick this round's arm: explore with probability gamma, else sample a
        policy by weight and follow it."""
        x = self.context_of(obs)
        delays = obs.vector(self.topology)
        if self.rng.random() < self.table.gamma:
            arm = int(self.rng.integers(self.n_arms))
            return Choice(
                slot=obs.slot, context=x, delays=delays, explored=True,
                arm=arm, policy_index=None, predictions=None, p=None, q=None,
            )
        probs = policy_distribution(self.table)
        p_vec = np.array([probs[p.policy_id] for p in self.policies])
        predictions = [p.predict(x) for p in self.policies]
        q = arm_distribution(probs, self.policies, x, self.n_arms, predictions)
        k = int(self.rng.choice(len(self.policies), p=p_vec))
        return Choice(
            slot=obs.slot, context=x, delays=delays, explored=False,
            arm=predictions[k], policy_index=k, predictions=predictions,
            p=p_vec, q=q,
        )

    def observe(self, choice: Choice, raw_cost: float) -> RoundOutcome:
        """Record the realized cost; on exploit rounds also update weights."""
        self.memory.append(
            choice.slot, choice.delays, choice.arm, raw_cost, context=choice.context
        )
        norm = normalize_cost(raw_cost, self.memory.cost_min, self.memory.cost_max)
        if not choice.explored:
            fake = fake_costs(choice.arm, norm, choice.q)
            self.table = update_weights(
                self.table, fake, self.policies, choice.context, choice.predictions
            )
            top = max(self.table.weights.values())
            if top < _UNDERFLOW_FLOOR:
                self.table = WeightTable(
                    weights={k: w / top for k, w in self.table.weights.items()},
                    gamma=self.table.gamma,
                    eps_update=self.table.eps_update,
                )
        policy_id = (
            None if choice.policy_index is None
            else self.policies[choice.policy_index].policy_id
        )
        return RoundOutcome(
            slot=choice.slot, agent=self.agent, explored=choice.explored,
            policy_id=policy_id, arm=choice.arm, raw_cost=float(raw_cost),
            norm_cost=norm, p=choice.p, q=choice.q,
        )

    def refresh_policies(self, seed: int) -> None:
        """Retrain every policy except the current heaviest, which survives
        untouched; each replacement inherits the weight of the policy it ousts."""
        self.generation += 1
        weights = [self.table.weights[p.policy_id] for p in self.policies]
        keep = int(np.argmax(weights))
        child_seeds = np.random.SeedSequence(
            [int(seed), _AGENT_STREAM, self.agent, self.generation]
        ).generate_state(len(self.policies))
        fresh_policies, fresh_weights = [], {}
        for k, policy in enumerate(self.policies):
            if k == keep:
                fresh_policies.append(policy)
                fresh_weights[policy.policy_id] = weights[k]
                continue
            sigma, strategy = self.strategies[k]
            dataset = build_dataset(self.memory, sigma=sigma, levels=self.bounds.levels)
            new_id = f"a{self.agent}g{self.generation}.{k}"
            replacement = train_policy(dataset, strategy, int(child_seeds[k]), policy_id=new_id)
            fresh_policies.append(replacement)
            fresh_weights[new_id] = weights[k]
        self.policies = fresh_policies
        self.table = WeightTable(
            weights=fresh_weights,
            gamma=self.table.gamma,
            eps_update=self.table.eps_update,
        )

    def relearn(self, levels: int, seed: int) -> None:
        """Refit bounds from memory and regenerate all policies from scratch."""
        self.bounds = fit_bounds(self.memory, levels)
        self.memory.attach_contexts(self.bounds)
        self.generation += 1
        self.policies = generate_policies(
            self.memory,
            len(self.strategies),
            self.strategies,
            seed=int(seed) + 7919 * (self.agent + 1) + self.generation,
            levels=levels,
            id_prefix=f"a{self.agent}r{self.generation}.",
        )
        self.table = WeightTable(
            weights={p.policy_id: 1.0 for p in self.policies},
            gamma=self.table.gamma,
            eps_update=self.table.eps_update,
        )


# ---------------------------------------------------------------------------
# Full run: collection, policy generation, online learning
# ---------------------------------------------------------------------------


@dataclass
class BanditRunConfig:
    """Everything the placement learner needs besides the simulator."""

    collect_rounds: int            # uniform-exploration rounds up front
    levels: int                    # discretization levels per entity
    policy_count: int
    refresh_interval: int          # rounds between policy refreshes
    horizon: int                   # total rounds including collection
    seed: int = 0
    gamma: float | None = None
    eps_update: float | None = None
    agents: int = 1
    refresh: bool = True           # False: keep the initial policies forever
    evaluate: bool = False         # record per-round costs of every arm
    strategies: list[tuple[float, TrainingStrategy]] | None = None
    relearn_at: tuple[int, ...] = ()
    memory_capacity: int = DEFAULT_CAPACITY

    def __post_init__(self):
        if self.collect_rounds < 1:
            raise ConfigError("need at least one collection round")
        if self.horizon <= self.collect_rounds:
            raise ConfigError("horizon must exceed the collection rounds")
        if self.levels < 1:
            raise ConfigError("need at least one discretization level")
        if self.policy_count < 1:
            raise ConfigError("need at least one policy")
        if self.refresh_interval < 1:
            raise ConfigError("refresh interval must be positive")
        if self.agents < 1:
            raise ConfigError("need at least one placed module")
        if self.collect_rounds > self.memory_capacity:
            raise ConfigError("collection rounds exceed memory capacity")
        if self.gamma is not None and not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")


@dataclass
class TrialResult:
    """Per-round trace of one run, for every placed module."""

    arms: list[Arm]
    collect_rounds: int
    horizon: int
    rounds: list[list[RoundOutcome]]            # [agent][slot]
    oracle_policy_cost: np.ndarray | None = None  # (horizon, agents)
    oracle_arm_cost: np.ndarray | None = None
    learners: list[OnlineLearner] | None = None

    @property
    def n_agents(self) -> int:
        return len(self.rounds)

    def costs(self, agent: int = 0) -> np.ndarray:
        return np.array([r.raw_cost for r in self.rounds[agent]])

    def regret(self, agent: int = 0) -> np.ndarray:
        if self.oracle_policy_cost is None:
            raise ValueError("run was not evaluated; no oracle costs recorded")
        return regret_series(self.costs(agent), self.oracle_policy_cost[:, agent])


def regret_series(costs, oracle) -> np.ndarray:
    """Cumulative sum of (realized cost - per-round oracle cost)."""
    costs = np.asarray(costs, dtype=float)
    oracle = np.asarray(oracle, dtype=float)
    if costs.shape != oracle.shape:
        raise ValueError(f"length mismatch: {costs.shape} vs {oracle.shape}")
    return np.cumsum(costs - oracle)


def _other_load(placements: list[int], arms: list[Arm], me: int) -> dict[str, int]:
    """Servers' co-location counts as seen by module `me` (itself excluded)."""
    load: dict[str, int] = {}
    for j, arm_idx in enumerate(placements):
        if j == me:
            continue
        server = arms[arm_idx].server
        load[server] = load.get(server, 0) + 1
    return load


def mod_dist_mab(sim: Simulator, cfg: BanditRunConfig) -> TrialResult:
    """Run the full pipeline: uniform collection, bound fitting, policy
    generation, then weighted online learning for the remaining rounds.

    With several agents (one per placed module) all decisions within a slot are
    simultaneous, and each module's realized cost includes the co-location
    penalty caused by the others.
    """
    arms = sim.arms
    n_arms = len(arms)
    n_agents = cfg.agents
    gamma = cfg.gamma if cfg.gamma is not None else default_gamma(cfg.horizon)
    eps = (
        cfg.eps_update
        if cfg.eps_update is not None
        else default_eps_update(cfg.horizon, n_arms, cfg.policy_count)
    )
    strategies = cfg.strategies or default_strategies(cfg.policy_count)
    if len(strategies) != cfg.policy_count:
        raise ConfigError("strategy list length must equal the policy count")

    agent_rngs = [
        np.random.default_rng([cfg.seed, _AGENT_STREAM, i]) for i in range(n_agents)
    ]
    memories = [
        Memory(sim.topology.entities, n_arms=n_arms, capacity=cfg.memory_capacity)
        for _ in range(n_agents)
    ]
    rounds: list[list[RoundOutcome]] = [[] for _ in range(n_agents)]
    cf_costs = (
        np.full((cfg.horizon, n_agents, n_arms), np.nan) if cfg.evaluate else None
    )

    # Phase 1: uniform arm picks for every module.
    for slot in range(cfg.collect_rounds):
        obs = sim.observe(slot)
        delays = obs.vector(sim.topology)
        placements = [int(r.integers(n_arms)) for r in agent_rngs]
        for i in range(n_agents):
            load = _other_load(placements, arms, i)
            cost = sim.cost(obs, arms[placements[i]], load)
            memories[i].append(slot, delays, placements[i], cost)
            norm = normalize_cost(cost, memories[i].cost_min, memories[i].cost_max)
            rounds[i].append(
                RoundOutcome(
                    slot=slot, agent=i, explored=True, policy_id=None,
                    arm=placements[i], raw_cost=cost, norm_cost=norm,
                )
            )
            if cfg.evaluate:
                for a in range(n_arms):
                    cf_costs[slot, i, a] = sim.cost(obs, arms[a], load)

    # Fit bounds, attach contexts, train the initial policy set.
    learners = []
    for i in range(n_agents):
        bounds = fit_bounds(memories[i], cfg.levels)
        memories[i].attach_contexts(bounds)
        policies = generate_policies(
            memories[i], cfg.policy_count, strategies,
            seed=cfg.seed + 7919 * (i + 1), levels=cfg.levels, id_prefix=f"a{i}p",
        )
        learners.append(
            OnlineLearner(
                policies=policies, strategies=strategies, memory=memories[i],
                bounds=bounds, topology=sim.topology, gamma=gamma,
                eps_update=eps, rng=agent_rngs[i], agent=i,
            )
        )

    oracle_policy = np.full((cfg.horizon, n_agents), np.nan) if cfg.evaluate else None
    oracle_arm = np.full((cfg.horizon, n_agents), np.nan) if cfg.evaluate else None
    if cfg.evaluate:
        # Collection rounds are scored retroactively against the initial policies.
        for slot in range(cfg.collect_rounds):
            obs = sim.observe(slot)
            for i, learner in enumerate(learners):
                x = learner.context_of(obs)
                per_policy = [cf_costs[slot, i, p.predict(x)] for p in learner.policies]
                oracle_policy[slot, i] = min(per_policy)
                oracle_arm[slot, i] = cf_costs[slot, i].min()

    # Phase 2: online learning.
    for slot in range(cfg.collect_rounds, cfg.horizon):
        obs = sim.observe(slot)
        choices = [learner.choose(obs) for learner in learners]
        placements = [c.arm for c in choices]
        for i, learner in enumerate(learners):
            load = _other_load(placements, arms, i)
            raw = sim.cost(obs, arms[placements[i]], load)
            rounds[i].append(learner.observe(choices[i], raw))
            if cfg.evaluate:
                for a in range(n_arms):
                    cf_costs[slot, i, a] = sim.cost(obs, arms[a], load)
                per_policy = [
                    cf_costs[slot, i, p.predict(choices[i].context)]
                    for p in learner.policies
                ]
                oracle_policy[slot, i] = min(per_policy)
                oracle_arm[slot, i] = cf_costs[slot, i].min()
        online_round = slot - cfg.collect_rounds + 1
        if cfg.refresh and online_round % cfg.refresh_interval == 0 and slot + 1 < cfg.horizon:
            for learner in learners:
                learner.refresh_policies(cfg.seed)
        if slot in cfg.relearn_at:
            for learner in learners:
                learner.relearn(cfg.levels, cfg.seed)

    return TrialResult(
        arms=arms,
        collect_rounds=cfg.collect_rounds,
        horizon=cfg.horizon,
        rounds=rounds,
        oracle_policy_cost=oracle_policy,
        oracle_arm_cost=oracle_arm,
        learners=learners,
    )
