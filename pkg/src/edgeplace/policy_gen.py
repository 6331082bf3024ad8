"""Placement policies: classifiers trained on cost-labeled contexts.

For each distinct context in memory, the label is the arm with the smallest
recorded cost.  Classes (arms) that dominate the label set are down-weighted
through w_a = exp(-rho_a / sigma^2), where rho_a is the fraction of contexts
labeled a, so under-represented placements still shape the decision boundary.
The classifier itself is a linear softmax model fitted by full-batch gradient
descent; given the same data, settings and seed it is fully reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .context_model import Context, Memory
from .errors import TrainingError

POLICY_FORMAT_VERSION = 1

# Stream tag for classifier weight initialization.
_TRAIN_STREAM = 3


@dataclass(frozen=True)
class TrainingStrategy:
    """Gradient-descent settings for one policy."""

    learning_rate: float = 0.1
    epochs: int = 400

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 1:
            raise ValueError("need at least one epoch")


@dataclass
class PolicyDataset:
    """Distinct contexts with their best-recorded arm and per-arm class weights."""

    contexts: np.ndarray      # (n, n_entities) integer levels
    labels: np.ndarray        # (n,) arm indices
    arm_share: np.ndarray     # (n_arms,) fraction of contexts labeled with each arm
    arm_weights: np.ndarray   # (n_arms,) exp(-share / sigma^2)
    levels: int
    n_arms: int
    sigma: float


def build_dataset(memory: Memory, sigma: float = 1.0, levels: int | None = None) -> PolicyDataset:
    """Label every distinct context in memory with its cheapest recorded arm.

    Ties are broken toward the lowest arm index; when several points recorded
    the same (context, arm) pair, the smallest cost represents that pair.
    """
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if len(memory) == 0:
        raise ValueError("cannot build a dataset from an empty memory")
    best: dict[Context, np.ndarray] = {}
    inferred_levels = 1
    for _, _, arm, cost, context in memory.points():
        if context is None:
            raise ValueError("memory has points without contexts; attach bounds first")
        inferred_levels = max(inferred_levels, max(context))
        per_arm = best.get(context)
        if per_arm is None:
            per_arm = np.full(memory.n_arms, np.inf)
            best[context] = per_arm
        if cost < per_arm[arm]:
            per_arm[arm] = cost
    contexts = np.array(sorted(best), dtype=int)
    labels = np.array([int(np.argmin(best[tuple(c)])) for c in contexts])
    share = np.bincount(labels, minlength=memory.n_arms) / len(labels)
    return PolicyDataset(
        contexts=contexts,
        labels=labels,
        arm_share=share,
        arm_weights=np.exp(-share / sigma**2),
        levels=int(levels) if levels is not None else inferred_levels,
        n_arms=memory.n_arms,
        sigma=float(sigma),
    )


def _features(contexts: np.ndarray, levels: int) -> np.ndarray:
    """Scale integer levels 1..L onto [0, 1] (all-zero when L == 1)."""
    x = np.asarray(contexts, dtype=float)
    if levels > 1:
        return (x - 1.0) / (levels - 1.0)
    return np.zeros_like(x)


def softmax_loss_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    labels: np.ndarray,
    sample_weights: np.ndarray,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted cross-entropy of a linear softmax model and its gradients.

    Returns (loss, d_weights, d_bias); loss is the mean over samples of
    w_i * -log p(label_i).
    """
    logits = features @ weights.T + bias
    logits -= logits.max(axis=1, keepdims=True)
    np.exp(logits, out=logits)
    probs = logits                      # reuse the buffer
    probs /= probs.sum(axis=1, keepdims=True)
    n = len(labels)
    idx = np.arange(n)
    picked = probs[idx, labels]
    loss = float(np.mean(sample_weights * -np.log(np.maximum(picked, 1e-300))))
    probs[idx, labels] -= 1.0           # turn probs into the error signal
    probs *= (sample_weights / n)[:, None]
    return loss, probs.T @ features, probs.sum(axis=0)


@dataclass
class Policy:
    """A deterministic context -> arm mapping given by a linear softmax model."""

    policy_id: str
    weights: np.ndarray   # (n_arms, n_entities)
    bias: np.ndarray      # (n_arms,)
    levels: int
    sigma: float
    strategy: TrainingStrategy

    @property
    def n_arms(self) -> int:
        return len(self.bias)

    def scores(self, context: Context) -> np.ndarray:
        x = np.asarray(context, dtype=float)
        if x.shape != (self.weights.shape[1],):
            raise ValueError(
                f"context length {x.shape} does not match policy features "
                f"({self.weights.shape[1]})"
            )
        feats = _features(x[None, :], self.levels)[0]
        return self.weights @ feats + self.bias

    def predict(self, context: Context) -> int:
        """Arm index with the highest score; ties resolve to the lowest index."""
        return int(np.argmax(self.scores(context)))

    def to_json(self) -> str:
        return json.dumps(
            {
                "format_version": POLICY_FORMAT_VERSION,
                "policy_id": self.policy_id,
                "levels": self.levels,
                "sigma": self.sigma,
                "learning_rate": self.strategy.learning_rate,
                "epochs": self.strategy.epochs,
                "weights": self.weights.tolist(),
                "bias": self.bias.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Policy":
        data = json.loads(text)
        version = data.get("format_version")
        if version != POLICY_FORMAT_VERSION:
            raise ValueError(f"unsupported policy format version {version!r}")
        return cls(
            policy_id=data["policy_id"],
            weights=np.asarray(data["weights"], dtype=float),
            bias=np.asarray(data["bias"], dtype=float),
            levels=int(data["levels"]),
            sigma=float(data["sigma"]),
            strategy=TrainingStrategy(
                learning_rate=float(data["learning_rate"]), epochs=int(data["epochs"])
            ),
        )


def train_policy(
    dataset: PolicyDataset,
    strategy: TrainingStrategy,
    seed: int,
    policy_id: str = "policy",
) -> Policy:
    """Fit a linear softmax classifier by full-batch gradient descent."""
    rng = np.random.default_rng([int(seed), _TRAIN_STREAM])
    n_features = dataset.contexts.shape[1]
    weights = 0.01 * rng.standard_normal((dataset.n_arms, n_features))
    bias = np.zeros(dataset.n_arms)
    feats = _features(dataset.contexts, dataset.levels)
    sample_w = dataset.arm_weights[dataset.labels]
    loss = np.inf
    for _ in range(strategy.epochs):
        loss, d_w, d_b = softmax_loss_grad(weights, bias, feats, dataset.labels, sample_w)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss while training {policy_id!r}")
        weights -= strategy.learning_rate * d_w
        bias -= strategy.learning_rate * d_b
    if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
        raise TrainingError(f"non-finite parameters after training {policy_id!r}")
    return Policy(
        policy_id=policy_id,
        weights=weights,
        bias=bias,
        levels=dataset.levels,
        sigma=dataset.sigma,
        strategy=strategy,
    )


def default_strategies(count: int) -> list[tuple[float, TrainingStrategy]]:
    """A small grid of (sigma, training settings) pairs, cycled to any length."""
    base = [
        (1.0, TrainingStrategy(learning_rate=0.1, epochs=300)),
        (0.5, TrainingStrategy(learning_rate=0.2, epochs=300)),
        (2.0, TrainingStrategy(learning_rate=0.1, epochs=200)),
        (1.0, TrainingStrategy(learning_rate=0.05, epochs=450)),
        (0.7, TrainingStrategy(learning_rate=0.3, epochs=120)),
        (1.5, TrainingStrategy(learning_rate=0.15, epochs=250)),
    ]
    return [base[i % len(base)] for i in range(count)]


def generate_policies(
    memory: Memory,
    count: int,
    strategies: list[tuple[float, TrainingStrategy]],
    seed: int,
    levels: int | None = None,
    id_prefix: str = "p",
) -> list[Policy]:
    """Train `count` policies, one per (sigma, strategy) pair."""
    if count < 1:
        raise ValueError("need at least one policy")
    if len(strategies) != count:
        raise ValueError(f"got {len(strategies)} strategies for {count} policies")
    child_seeds = np.random.SeedSequence([int(seed), 13]).generate_state(count)
    policies = []
    for k, (sigma, strategy) in enumerate(strategies):
        dataset = build_dataset(memory, sigma=sigma, levels=levels)
        policies.append(
            train_policy(dataset, strategy, int(child_seeds[k]), policy_id=f"{id_prefix}{k}")
        )
    return policies
