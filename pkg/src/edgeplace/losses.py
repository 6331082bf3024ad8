"""Training losses for joint identity + attribute heads.

The identity head uses plain cross-entropy over softmax class probabilities.
The attribute head uses per-attribute binary cross-entropy, with each
attribute weighted by exp(-rho/sigma^2) where rho is the attribute's positive
rate, so rare attributes are not drowned out by common ones.  The combined
objective blends both with a mixing factor lambda, dividing the attribute term
by the attribute count so the two sides stay on comparable scales.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-7


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a 2-d array, got shape {arr.shape}")
    return arr


@dataclass
class ReidBatch:
    """Softmax identity predictions with one-hot labels.

    predictions: (N, K) class probabilities, each row summing to 1.
    labels: (N, K) one-hot ground truth.
    """

    predictions: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.predictions = _as_matrix(self.predictions, "predictions")
        self.labels = _as_matrix(self.labels, "labels")
        if self.predictions.shape != self.labels.shape:
            raise ValueError("predictions and labels must share a shape")

    def validate(self) -> None:
        p, y = self.predictions, self.labels
        if np.any(p <= 0.0) or np.any(p > 1.0):
            raise ValueError("prediction entries must lie in (0, 1]")
        if np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("prediction rows must sum to 1 within 1e-9")
        if not np.array_equal(y, y.astype(bool).astype(float)):
            raise ValueError("labels must be one-hot (0/1 entries)")
        if np.any(y.sum(axis=1) != 1.0):
            raise ValueError("each label row must contain exactly one 1")


@dataclass
class AttrBatch:
    """Independent per-attribute probabilities with binary labels and weights.

    predictions: (N, M) probabilities, clamped away from 0 and 1.
    labels: (N, M) binary ground truth.
    weights: (M,) per-attribute weights, e.g. from attribute_weights().
    """

    predictions: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.predictions = np.clip(
            _as_matrix(self.predictions, "predictions"), PROB_FLOOR, 1.0 - PROB_FLOOR
        )
        self.labels = _as_matrix(self.labels, "labels")
        self.weights = np.asarray(self.weights, dtype=float)
        if self.predictions.shape != self.labels.shape:
            raise ValueError("predictions and labels must share a shape")
        if self.weights.shape != (self.predictions.shape[1],):
            raise ValueError("need one weight per attribute column")

    def validate(self) -> None:
        if not np.array_equal(self.labels, self.labels.astype(bool).astype(float)):
            raise ValueError("labels must be binary")
        if np.any(self.weights <= 0.0):
            raise ValueError("attribute weights must be positive")


def attribute_weights(positive_rates, sigma: float = 1.0) -> np.ndarray:
    """w_j = exp(-rho_j / sigma^2) for per-attribute positive rates rho_j."""
    rho = np.asarray(positive_rates, dtype=float)
    if np.any(rho < 0.0) or np.any(rho > 1.0):
        raise ValueError("positive rates must lie in [0, 1]")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    return np.exp(-rho / sigma**2)


def loss_reid(batch: ReidBatch, check: bool = True) -> float:
    """Mean cross-entropy of the identity head."""
    if check:
        batch.validate()
    p = np.clip(batch.predictions, PROB_FLOOR, None)
    return float(-np.sum(batch.labels * np.log(p)) / len(p))


def loss_reid_grad(batch: ReidBatch, check: bool = True) -> np.ndarray:
    """d loss_reid / d prediction, entrywise: -y / (N p)."""
    if check:
        batch.validate()
    p = np.clip(batch.predictions, PROB_FLOOR, None)
    return -batch.labels / (len(p) * p)


def loss_attr(batch: AttrBatch, check: bool = True) -> float:
    """Weighted mean binary cross-entropy of the attribute head."""
    if check:
        batch.validate()
    p, y, w = batch.predictions, batch.labels, batch.weights
    per_entry = y * np.log(p) + (1.0 - y) * np.log(1.0 - p)
    return float(-np.sum(w * per_entry) / len(p))


def loss_attr_grad(batch: AttrBatch, check: bool = True) -> np.ndarray:
    """d loss_attr / d prediction: -w_j (y/p - (1-y)/(1-p)) / N."""
    if check:
        batch.validate()
    p, y, w = batch.predictions, batch.labels, batch.weights
    return -w * (y / p - (1.0 - y) / (1.0 - p)) / len(p)


def loss_total(reid: float, attr: float, mix: float = 0.5, n_attributes: int = 1) -> float:
    """Blend: mix * reid + ((1 - mix) / n_attributes) * attr."""
    if not 0.0 <= mix <= 1.0:
        raise ValueError("mix must lie in [0, 1]")
    if n_attributes < 1:
        raise ValueError("need at least one attribute")
    return mix * reid + (1.0 - mix) / n_attributes * attr


def total_grads(
    reid_batch: ReidBatch,
    attr_batch: AttrBatch,
    mix: float = 0.5,
    check: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the blended loss w.r.t. both prediction matrices."""
    if not 0.0 <= mix <= 1.0:
        raise ValueError("mix must lie in [0, 1]")
    n_attributes = attr_batch.predictions.shape[1]
    return (
        mix * loss_reid_grad(reid_batch, check),
        (1.0 - mix) / n_attributes * loss_attr_grad(attr_batch, check),
    )
