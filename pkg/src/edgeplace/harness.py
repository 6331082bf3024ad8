"""Experiment drivers: algorithm runners, paired-seed scenarios, trace files.

Every runner consumes the same seeded simulator, so two algorithms given the
same seed face identical delay realizations and differ only in their choices.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from .bandit_core import (
    BanditRunConfig,
    RoundOutcome,
    TrialResult,
    mod_dist_mab,
    normalize_cost,
)
from .context_model import Memory, discretize, fit_bounds
from .errors import ConfigError
from .mec_sim import Arm, NetworkTopology, Simulator, load_delay_model, load_topology
from .policy_gen import TrainingStrategy, default_strategies, generate_policies
from .reid_pipeline import (
    Feature,
    RankingReport,
    ReidPipeline,
    SyntheticPeople,
    TaggedFeature,
    evaluate_ranking,
)

ALGORITHMS = ("moddistmab", "fixed", "greedy", "no_policy_update", "no_online_learning")
SCENARIOS = ("static", "dynamic")

_AGENT_STREAM = 2   # must match bandit_core so paired runs share phase-1 picks
_STREAM_QUERIES = 5


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    """One placement experiment: scenario files plus learner knobs."""

    topology: str
    delays: str
    algorithm: str = "moddistmab"
    scenario: str = "static"
    N: int = 100              # uniform collection rounds
    L: int = 3                # discretization levels
    P: int = 5                # policies kept by the learner
    I: int = 250              # rounds between policy refreshes
    T: int = 2000             # total rounds
    gamma: float | None = None
    eps_update: float | None = None
    seed: int = 0
    modules: int | None = None  # placed modules; default 1 + number of cameras
    out: str | None = None
    evaluate: bool = True
    relearn_at: tuple[int, ...] = ()

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                f"unknown algorithm {self.algorithm!r}; pick one of {ALGORITHMS}"
            )
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}")
        if self.T <= self.N:
            raise ConfigError("total rounds T must exceed collection rounds N")
        for name in ("N", "L", "P", "I", "T"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.modules is not None and self.modules < 1:
            raise ConfigError("modules must be positive when given")


_CONFIG_KEYS = {
    "topology", "delays", "algorithm", "scenario", "N", "L", "P", "I", "T",
    "gamma", "eps_update", "seed", "modules", "out", "relearn_at",
}


def load_experiment_config(path, overrides: dict | None = None) -> ExperimentConfig:
    """Read an experiment file; explicit overrides (e.g. CLI flags) win."""
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"experiment file {path} must be a mapping")
    unknown = set(data) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown keys in {path}: {sorted(unknown)}")
    merged = dict(data)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    base = os.path.dirname(os.path.abspath(path))
    for key in ("topology", "delays"):
        if key not in merged:
            raise ConfigError(f"experiment file {path} needs a {key!r} path")
        if not os.path.isabs(merged[key]):
            merged[key] = os.path.join(base, merged[key])
    if "relearn_at" in merged and merged["relearn_at"] is not None:
        merged["relearn_at"] = tuple(int(v) for v in merged["relearn_at"])
    return ExperimentConfig(**merged)


def build_simulator(cfg: ExperimentConfig) -> Simulator:
    topology = load_topology(cfg.topology)
    model = load_delay_model(cfg.delays, topology)
    if cfg.scenario == "dynamic":
        if model.background is None:
            raise ConfigError(
                "dynamic scenario requires a dynamic section in the delay file"
            )
        model.dynamic = True
    else:
        model.dynamic = False
    return Simulator(topology, model, cfg.seed)


def _module_count(cfg: ExperimentConfig, topology: NetworkTopology) -> int:
    if cfg.modules is not None:
        return cfg.modules
    return 1 + len(topology.cameras)


# ---------------------------------------------------------------------------
# Algorithm runners
# ---------------------------------------------------------------------------

def _loads_excluding(placements: list[int], arms: list[Arm], me: int) -> dict[str, int]:
    load: dict[str, int] = {}
    for j, arm_idx in enumerate(placements):
        if j == me:
            continue
        server = arms[arm_idx].server
        load[server] = load.get(server, 0) + 1
    return load


def _static_policy_rounds(sim: Simulator, horizon: int, n_agents: int,
                          pick: "callable") -> list[list[RoundOutcome]]:
    """Drive a non-learning baseline: `pick(slot, obs)` returns the arm index
    every module uses that slot."""
    arms = sim.arms
    rounds: list[list[RoundOutcome]] = [[] for _ in range(n_agents)]
    for slot in range(horizon):
        obs = sim.observe(slot)
        arm_idx = pick(slot, obs)
        placements = [arm_idx] * n_agents
        for i in range(n_agents):
            load = _loads_excluding(placements, arms, i)
            cost = sim.cost(obs, arms[arm_idx], load)
            rounds[i].append(
                RoundOutcome(
                    slot=slot, agent=i, explored=False, policy_id=None,
                    arm=arm_idx, raw_cost=cost, norm_cost=float("nan"),
                )
            )
    return rounds


def run_fixed(sim: Simulator, horizon: int, n_agents: int) -> TrialResult:
    """Consolidation baseline: everything on the largest-capacity server, via
    its first incident link, every round."""
    topo, model = sim.topology, sim.model
    server = max(topo.servers, key=lambda s: model.capacity[s])
    arm = Arm(server=server, link=topo.first_link(server))
    arm_idx = sim.arms.index(arm)
    rounds = _static_policy_rounds(sim, horizon, n_agents, lambda slot, obs: arm_idx)
    return TrialResult(arms=sim.arms, collect_rounds=0, horizon=horizon, rounds=rounds)


def run_greedy(sim: Simulator, horizon: int, n_agents: int) -> TrialResult:
    """Each round, chase the server whose observed processing delay has the
    lowest historical mean (current slot included); transmission delay is
    ignored by the criterion but still paid in the realized cost."""
    topo = sim.topology
    sums = {s: 0.0 for s in topo.servers}
    count = 0

    def pick(slot, obs):
        nonlocal count
        count += 1
        for s in topo.servers:
            sums[s] += obs.server_delays[s]
        best = min(topo.servers, key=lambda s: sums[s] / count)
        return sim.arms.index(Arm(server=best, link=topo.first_link(best)))

    rounds = _static_policy_rounds(sim, horizon, n_agents, pick)
    return TrialResult(arms=sim.arms, collect_rounds=0, horizon=horizon, rounds=rounds)


def run_no_online_learning(
    sim: Simulator,
    cfg: BanditRunConfig,
) -> TrialResult:
    """Ablation: one policy, always followed, retrained every refresh interval.

    The collection phase matches the full learner's draw-for-draw, so a paired
    seed sees the identical first N rounds.
    """
    arms = sim.arms
    n_arms = len(arms)
    n_agents = cfg.agents
    strategies = cfg.strategies or default_strategies(cfg.policy_count)
    sigma, strategy = strategies[0]
    agent_rngs = [
        np.random.default_rng([cfg.seed, _AGENT_STREAM, i]) for i in range(n_agents)
    ]
    memories = [
        Memory(sim.topology.entities, n_arms=n_arms, capacity=cfg.memory_capacity)
        for _ in range(n_agents)
    ]
    rounds: list[list[RoundOutcome]] = [[] for _ in range(n_agents)]

    for slot in range(cfg.collect_rounds):
        obs = sim.observe(slot)
        delays = obs.vector(sim.topology)
        placements = [int(r.integers(n_arms)) for r in agent_rngs]
        for i in range(n_agents):
            load = _loads_excluding(placements, arms, i)
            cost = sim.cost(obs, arms[placements[i]], load)
            memories[i].append(slot, delays, placements[i], cost)
            norm = normalize_cost(cost, memories[i].cost_min, memories[i].cost_max)
            rounds[i].append(
                RoundOutcome(
                    slot=slot, agent=i, explored=True, policy_id=None,
                    arm=placements[i], raw_cost=cost, norm_cost=norm,
                )
            )

    bounds, policies = [], []
    for i in range(n_agents):
        b = fit_bounds(memories[i], cfg.levels)
        memories[i].attach_contexts(b)
        bounds.append(b)
        policies.append(
            generate_policies(
                memories[i], 1, [(sigma, strategy)],
                seed=cfg.seed + 7919 * (i + 1), levels=cfg.levels,
                id_prefix=f"a{i}s",
            )[0]
        )

    for slot in range(cfg.collect_rounds, cfg.horizon):
        obs = sim.observe(slot)
        delays = obs.vector(sim.topology)
        contexts = [discretize(delays, bounds[i]) for i in range(n_agents)]
        placements = [policies[i].predict(contexts[i]) for i in range(n_agents)]
        for i in range(n_agents):
            load = _loads_excluding(placements, arms, i)
            cost = sim.cost(obs, arms[placements[i]], load)
            memories[i].append(slot, delays, placements[i], cost, context=contexts[i])
            norm = normalize_cost(cost, memories[i].cost_min, memories[i].cost_max)
            rounds[i].append(
                RoundOutcome(
                    slot=slot, agent=i, explored=False,
                    policy_id=policies[i].policy_id, arm=placements[i],
                    raw_cost=cost, norm_cost=norm,
                )
            )
        online_round = slot - cfg.collect_rounds + 1
        if online_round % cfg.refresh_interval == 0 and slot + 1 < cfg.horizon:
            for i in range(n_agents):
                policies[i] = generate_policies(
                    memories[i], 1, [(sigma, strategy)],
                    seed=cfg.seed + 7919 * (i + 1) + online_round,
                    levels=cfg.levels,
                    id_prefix=f"a{i}s{online_round}.",
                )[0]

    return TrialResult(
        arms=arms, collect_rounds=cfg.collect_rounds, horizon=cfg.horizon,
        rounds=rounds,
    )


def run_experiment(cfg: ExperimentConfig) -> TrialResult:
    """Build the simulator and dispatch on cfg.algorithm."""
    sim = build_simulator(cfg)
    n_agents = _module_count(cfg, sim.topology)
    if cfg.algorithm == "fixed":
        return run_fixed(sim, cfg.T, n_agents)
    if cfg.algorithm == "greedy":
        return run_greedy(sim, cfg.T, n_agents)
    bandit_cfg = BanditRunConfig(
        collect_rounds=cfg.N,
        levels=cfg.L,
        policy_count=cfg.P,
        refresh_interval=cfg.I,
        horizon=cfg.T,
        seed=cfg.seed,
        gamma=cfg.gamma,
        eps_update=cfg.eps_update,
        agents=n_agents,
        refresh=cfg.algorithm != "no_policy_update",
        evaluate=cfg.evaluate and cfg.algorithm in ("moddistmab", "no_policy_update"),
        relearn_at=cfg.relearn_at,
    )
    if cfg.algorithm == "no_online_learning":
        return run_no_online_learning(sim, bandit_cfg)
    return mod_dist_mab(sim, bandit_cfg)


# ---------------------------------------------------------------------------
# Trace files
# ---------------------------------------------------------------------------

TRACE_COLUMNS = (
    "slot", "explored", "policy_id", "arm_server", "arm_link",
    "raw_cost_ms", "norm_cost", "regret_cum",
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def emit_csv(result: TrialResult, path) -> None:
    """Write the per-round trace; multi-module runs gain a leading `agent`
    column, single-module runs use exactly the documented eight columns."""
    multi = result.n_agents > 1
    regrets = []
    for agent in range(result.n_agents):
        if result.oracle_policy_cost is not None:
            regrets.append(result.regret(agent))
        else:
            regrets.append(None)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = (("agent",) if multi else ()) + TRACE_COLUMNS
        writer.writerow(header)
        for slot in range(result.horizon):
            for agent in range(result.n_agents):
                out = result.rounds[agent][slot]
                arm = result.arms[out.arm]
                cum = None if regrets[agent] is None else float(regrets[agent][slot])
                row = [
                    out.slot, int(out.explored), out.policy_id or "",
                    arm.server, arm.link, _fmt(out.raw_cost),
                    _fmt(out.norm_cost), _fmt(cum),
                ]
                if multi:
                    row.insert(0, agent)
                writer.writerow(row)


def read_trace(path) -> dict[str, np.ndarray]:
    """Load a trace CSV back into column arrays (strings left as objects)."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    if not rows:
        return {name: np.array([]) for name in TRACE_COLUMNS}
    cols: dict[str, list] = {name: [] for name in rows[0].keys()}
    for row in rows:
        for key, value in row.items():
            cols[key].append(value)
    out: dict[str, np.ndarray] = {}
    for key, values in cols.items():
        if key in ("slot", "agent", "explored"):
            out[key] = np.array([int(v) for v in values])
        elif key in ("raw_cost_ms", "norm_cost", "regret_cum"):
            out[key] = np.array([float(v) if v else np.nan for v in values])
        else:
            out[key] = np.array(values, dtype=object)
    return out


def mean_delay(result: TrialResult, tail_fraction: float = 1.0) -> float:
    """Mean realized delay over the last `tail_fraction` of the horizon,
    averaged across modules."""
    if not 0.0 < tail_fraction <= 1.0:
        raise ValueError("tail_fraction must lie in (0, 1]")
    start = int(round(result.horizon * (1.0 - tail_fraction)))
    values = [
        out.raw_cost
        for agent_rounds in result.rounds
        for out in agent_rounds[start:]
    ]
    return float(np.mean(values))


def regret_exponent(regret: np.ndarray, fit_from: int = 1) -> float:
    """Slope of log R(t) against log t over rounds >= fit_from."""
    r = np.asarray(regret, dtype=float)
    t = np.arange(1, len(r) + 1)
    mask = (t >= fit_from) & (r > 0)
    if mask.sum() < 2:
        raise ValueError("not enough positive regret points to fit")
    slope, _ = np.polyfit(np.log(t[mask]), np.log(r[mask]), 1)
    return float(slope)


# ---------------------------------------------------------------------------
# Re-identification stream
# ---------------------------------------------------------------------------

@dataclass
class StreamConfig:
    """Synthetic detection stream pushed through the re-id pipeline."""

    cameras: int = 4
    identities: int = 50
    queries: int = 1000
    noise: float = 0.05
    feature_dim: int = 128
    n_attributes: int = 8
    threshold: float = 0.9
    keep: float = 0.7
    seed: int = 0
    sharded: bool = True

    def __post_init__(self):
        if self.cameras < 1 or self.identities < 1 or self.queries < 1:
            raise ConfigError("cameras, identities and queries must be positive")
        if self.noise < 0:
            raise ConfigError("noise must be non-negative")


@dataclass
class ReidStreamReport:
    """Stream-level accuracy plus ranking metrics under both junk rules."""

    identity_accuracy: float
    new_identity_precision: float
    new_identities: int
    queries: int
    conventional: RankingReport
    framejunk: RankingReport
    decisions: list[tuple[str, int]] = field(default_factory=list)


def run_reid_stream(cfg: StreamConfig) -> ReidStreamReport:
    """Feed a ground-truthed synthetic stream through the pipeline and score it."""
    camera_names = [f"cam{i}" for i in range(cfg.cameras)]
    people = SyntheticPeople(
        cfg.identities, dim=cfg.feature_dim, noise=cfg.noise,
        n_attributes=cfg.n_attributes, seed=cfg.seed,
    )
    pipeline = ReidPipeline(
        camera_names, dim=cfg.feature_dim, threshold=cfg.threshold,
        keep=cfg.keep, sharded=cfg.sharded,
    )
    rng = np.random.default_rng([cfg.seed, _STREAM_QUERIES])
    tagged: list[TaggedFeature] = []
    decisions: list[tuple[str, int]] = []
    owner_of: dict[int, int] = {}   # allocated identity -> ground-truth identity
    seen: set[int] = set()
    correct = 0
    new_count = 0
    new_correct = 0
    for q in range(cfg.queries):
        gt = int(rng.integers(cfg.identities))
        camera = camera_names[int(rng.integers(cfg.cameras))]
        feature = people.observe(gt, camera=camera, frame=q)
        decision = pipeline.process(feature, people.attributes[gt])
        decisions.append((decision.kind, decision.identity))
        if decision.kind == "new":
            new_count += 1
            owner_of[decision.identity] = gt
            if gt not in seen:
                new_correct += 1
                correct += 1
        else:
            if owner_of.get(decision.identity) == gt:
                correct += 1
        seen.add(gt)
        tagged.append(
            TaggedFeature(vector=feature.vector, identity=gt, camera=camera, frame=q)
        )
    def ranked(rule: str) -> RankingReport:
        # A rule can junk away every candidate (e.g. the conventional rule on
        # a single-camera stream); report that as zero evaluated queries
        # instead of failing the whole run.
        try:
            return evaluate_ranking(tagged, tagged, rule)
        except ValueError:
            return RankingReport(
                cmc=np.full(len(tagged), np.nan),
                mean_ap=float("nan"),
                evaluated=0,
                excluded=len(tagged),
            )

    return ReidStreamReport(
        identity_accuracy=correct / cfg.queries,
        new_identity_precision=(new_correct / new_count) if new_count else 1.0,
        new_identities=new_count,
        queries=cfg.queries,
        conventional=ranked("conventional"),
        framejunk=ranked("framejunk"),
        decisions=decisions,
    )


def write_ranking_csv(report: RankingReport, path) -> None:
    """Ranking metrics as CSV: one (k, cmc_k) row per rank, then a mAP line."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("k", "cmc"))
        for k, value in enumerate(report.cmc, start=1):
            writer.writerow((k, repr(float(value))))
        writer.writerow(("mAP", repr(float(report.mean_ap))))
