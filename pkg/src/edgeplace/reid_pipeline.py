"""Distributed person re-identification over per-camera gallery shards.

Each camera keeps its own shard of L2-normalized appearance features.  A query
is matched locally on every shard (max cosine similarity), the shard results
are reduced to a single best candidate, and a strict threshold decides between
reusing that identity and allocating a fresh one.  Attribute vectors attached
to existing identities are folded in through an exponential moving average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Stream tag for synthetic appearance draws.
_REID_STREAM = 4

DEFAULT_THRESHOLD = 0.9
DEFAULT_FUSION_KEEP = 0.7


@dataclass(frozen=True)
class Feature:
    """A unit-norm appearance vector tagged with where and when it was seen."""

    vector: np.ndarray
    camera: str
    frame: int

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=float)
        norm = float(np.linalg.norm(v))
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("feature vector must be finite and non-zero")
        object.__setattr__(self, "vector", v / norm)


@dataclass
class LocalMatch:
    """Best candidate from one shard."""

    similarity: float
    identity: int
    camera: str | None


@dataclass
class Decision:
    """Outcome of a global identity decision."""

    kind: str                 # "existing" | "new"
    identity: int
    similarity: float | None  # best similarity seen, None on an empty gallery


@dataclass
class PersonInstance:
    """Global state for one identity: fused attributes and sighting history."""

    identity: int
    attributes: np.ndarray
    sightings: list[tuple[str, int]] = field(default_factory=list)


class GalleryShard:
    """Feature store for a single camera (camera=None accepts any origin)."""

    def __init__(self, camera: str | None, dim: int):
        if dim < 1:
            raise ValueError("feature dimension must be positive")
        self.camera = camera
        self.dim = int(dim)
        self._matrix = np.empty((8, dim))
        self._identities: list[int] = []

    def __len__(self) -> int:
        return len(self._identities)

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix[: len(self._identities)]

    @property
    def identities(self) -> list[int]:
        return list(self._identities)

    def append(self, feature: Feature, identity: int) -> None:
        if self.camera is not None and feature.camera != self.camera:
            raise ValueError(
                f"feature from camera {feature.camera!r} cannot enter the "
                f"{self.camera!r} shard"
            )
        if feature.vector.shape != (self.dim,):
            raise ValueError(
                f"feature dimension {feature.vector.shape} does not match shard ({self.dim})"
            )
        n = len(self._identities)
        if n == len(self._matrix):
            grown = np.empty((2 * n, self.dim))
            grown[:n] = self._matrix
            self._matrix = grown
        self._matrix[n] = feature.vector
        self._identities.append(int(identity))

    def local_match(self, vector: np.ndarray) -> LocalMatch | None:
        """Highest-cosine entry of this shard, or None when it is empty."""
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (self.dim,):
            raise ValueError(
                f"query dimension {vector.shape} does not match shard ({self.dim})"
            )
        if not self._identities:
            return None
        # Row-wise multiply-sum instead of BLAS matmul: the reduction order
        # then depends only on the feature dimension, so a one-row shard and a
        # merged store score the same entry bitwise identically.
        sims = (self.matrix * vector).sum(axis=1)
        best = int(np.argmax(sims))
        return LocalMatch(
            similarity=float(sims[best]),
            identity=self._identities[best],
            camera=self.camera,
        )


def fuse_attributes(old: np.ndarray, new: np.ndarray, keep: float = DEFAULT_FUSION_KEEP) -> np.ndarray:
    """Exponential moving average: keep * old + (1 - keep) * new."""
    old = np.asarray(old, dtype=float)
    new = np.asarray(new, dtype=float)
    if old.shape != new.shape:
        raise ValueError("attribute vectors must share a shape")
    if not 0.0 <= keep <= 1.0:
        raise ValueError("keep fraction must lie in [0, 1]")
    return keep * old + (1.0 - keep) * new


class IdentityDirectory:
    """Global identity registry: strict-threshold matching, monotone fresh ids."""

    def __init__(self, threshold: float = DEFAULT_THRESHOLD, keep: float = DEFAULT_FUSION_KEEP):
        if not -1.0 <= threshold <= 1.0:
            raise ValueError("threshold must be a valid cosine similarity")
        self.threshold = float(threshold)
        self.keep = float(keep)
        self.instances: dict[int, PersonInstance] = {}
        self._next_identity = 0

    def decide(
        self,
        local_results: list[LocalMatch | None],
        attributes: np.ndarray,
        sighting: tuple[str, int],
    ) -> Decision:
        """Reduce shard results and either reuse an identity or mint a new one.

        Matching is strict: the best similarity must exceed the threshold, so
        a similarity exactly at the threshold still opens a new identity.
        """
        best: LocalMatch | None = None
        for result in local_results:
            if result is None:
                continue
            if best is None or result.similarity > best.similarity:
                best = result
        attributes = np.asarray(attributes, dtype=float)
        if best is not None and best.similarity > self.threshold:
            instance = self.instances[best.identity]
            instance.attributes = fuse_attributes(instance.attributes, attributes, self.keep)
            instance.sightings.append(sighting)
            return Decision(kind="existing", identity=best.identity, similarity=best.similarity)
        identity = self._next_identity
        self._next_identity += 1
        self.instances[identity] = PersonInstance(
            identity=identity, attributes=attributes.copy(), sightings=[sighting]
        )
        return Decision(
            kind="new",
            identity=identity,
            similarity=None if best is None else best.similarity,
        )


def gallery_update(shards: dict[str, GalleryShard], decision: Decision, feature: Feature) -> None:
    """Append the decided (feature, identity) pair to the origin camera's shard."""
    try:
        shard = shards[feature.camera]
    except KeyError:
        raise ValueError(f"no shard for camera {feature.camera!r}") from None
    shard.append(feature, decision.identity)


class ReidPipeline:
    """Shards plus directory wired together; one call per incoming detection."""

    def __init__(
        self,
        cameras: list[str],
        dim: int,
        threshold: float = DEFAULT_THRESHOLD,
        keep: float = DEFAULT_FUSION_KEEP,
        sharded: bool = True,
    ):
        if not cameras:
            raise ValueError("need at least one camera")
        self.cameras = sorted(cameras)
        self.sharded = sharded
        if sharded:
            self.shards = {c: GalleryShard(c, dim) for c in self.cameras}
        else:
            # Single communal store; shard routing is bypassed entirely.
            communal = GalleryShard(None, dim)
            self.shards = {c: communal for c in self.cameras}
        self.directory = IdentityDirectory(threshold=threshold, keep=keep)

    def _stores(self) -> list[GalleryShard]:
        if self.sharded:
            return [self.shards[c] for c in self.cameras]
        return [self.shards[self.cameras[0]]]

    def process(self, feature: Feature, attributes: np.ndarray) -> Decision:
        locals_ = [store.local_match(feature.vector) for store in self._stores()]
        decision = self.directory.decide(
            locals_, attributes, sighting=(feature.camera, feature.frame)
        )
        gallery_update(self.shards, decision, feature)
        return decision


# ---------------------------------------------------------------------------
# Threshold calibration
# ---------------------------------------------------------------------------

def calibrate_threshold(positives, negatives) -> float:
    """Pick a decision threshold from labeled similarity samples.

    If the two classes are separated, the midpoint of the gap between the
    highest negative and the lowest positive is returned.  Otherwise every
    observed value is tried as a candidate and the one minimizing total
    misclassifications (positives <= t plus negatives > t) wins, ties going to
    the lower threshold.
    """
    pos = np.asarray(positives, dtype=float)
    neg = np.asarray(negatives, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need at least one positive and one negative sample")
    if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
        raise ValueError("similarity samples must be finite")
    hi_neg, lo_pos = float(neg.max()), float(pos.min())
    if hi_neg < lo_pos:
        return (hi_neg + lo_pos) / 2.0
    candidates = np.unique(np.concatenate([pos, neg]))
    errors = [int(np.sum(pos <= t)) + int(np.sum(neg > t)) for t in candidates]
    return float(candidates[int(np.argmin(errors))])


# ---------------------------------------------------------------------------
# Ranking evaluation (CMC / mAP)
# ---------------------------------------------------------------------------

JUNK_RULES = ("conventional", "framejunk")


@dataclass(frozen=True)
class TaggedFeature:
    """A gallery or probe entry with ground-truth bookkeeping."""

    vector: np.ndarray
    identity: int
    camera: str
    frame: int


@dataclass
class RankingReport:
    """Aggregated CMC curve and mean average precision."""

    cmc: np.ndarray
    mean_ap: float
    evaluated: int
    excluded: int


def _single_query_ap_cmc(order: np.ndarray, good: np.ndarray, junk: np.ndarray,
                         n_gallery: int) -> tuple[float, np.ndarray]:
    cmc = np.zeros(n_gallery)
    keep = np.isin(order, junk, invert=True)
    clean = order[keep]
    hit_rows = np.argwhere(np.isin(clean, good)).flatten()
    ngood = len(good)
    cmc[hit_rows[0]:] = 1.0
    ap = 0.0
    for i, row in enumerate(hit_rows):
        d_recall = 1.0 / ngood
        precision = (i + 1.0) / (row + 1.0)
        old_precision = i / row if row != 0 else 1.0
        ap += d_recall * (old_precision + precision) / 2.0
    return ap, cmc


def evaluate_ranking(
    queries: list[TaggedFeature],
    gallery: list[TaggedFeature],
    junk_rule: str = "conventional",
) -> RankingReport:
    """Rank the gallery for each query and aggregate CMC and mAP.

    junk_rule decides which same-identity entries are discarded from the
    ranking rather than scored:
      - "conventional": every gallery entry from the query's own camera;
      - "framejunk": only co-detections from the very same (camera, frame),
        so cross-frame matches within one camera still count.
    """
    if junk_rule not in JUNK_RULES:
        raise ValueError(f"junk_rule must be one of {JUNK_RULES}")
    if not queries or not gallery:
        raise ValueError("need non-empty query and gallery sets")
    g_matrix = np.stack([g.vector for g in gallery])
    g_ids = np.array([g.identity for g in gallery])
    g_cams = np.array([g.camera for g in gallery])
    g_frames = np.array([g.frame for g in gallery])

    total_cmc = np.zeros(len(gallery))
    ap_values = []
    excluded = 0
    for query in queries:
        sims = g_matrix @ query.vector
        order = np.argsort(-sims, kind="stable")
        same_id = g_ids == query.identity
        same_cam = g_cams == query.camera
        if junk_rule == "conventional":
            junk_mask = same_id & same_cam
        else:
            junk_mask = same_id & same_cam & (g_frames == query.frame)
        good = np.argwhere(same_id & ~junk_mask).flatten()
        junk = np.argwhere(junk_mask).flatten()
        if len(good) == 0:
            excluded += 1
            continue
        ap, cmc = _single_query_ap_cmc(order, good, junk, len(gallery))
        total_cmc += cmc
        ap_values.append(ap)
    if not ap_values:
        raise ValueError("every query was excluded; nothing to evaluate")
    evaluated = len(ap_values)
    return RankingReport(
        cmc=total_cmc / evaluated,
        mean_ap=float(np.mean(ap_values)),
        evaluated=evaluated,
        excluded=excluded,
    )


# ---------------------------------------------------------------------------
# Synthetic appearance stream
# ---------------------------------------------------------------------------

class SyntheticPeople:
    """Ground-truth identities with noisy unit-norm appearance draws.

    `noise` is the RMS norm of the perturbation added to a unit prototype, so
    its effect on cosine similarity does not depend on the feature dimension:
    two sightings of the same person score roughly 1 / (1 + noise^2).
    """

    def __init__(self, n_identities: int, dim: int = 128, noise: float = 0.05,
                 n_attributes: int = 8, seed: int = 0):
        if n_identities < 1:
            raise ValueError("need at least one identity")
        rng = np.random.default_rng([seed, _REID_STREAM])
        prototypes = rng.standard_normal((n_identities, dim))
        self.prototypes = prototypes / np.linalg.norm(prototypes, axis=1, keepdims=True)
        self.attributes = rng.random((n_identities, n_attributes))
        self.noise = float(noise)
        self.dim = dim
        self._rng = rng

    def observe(self, identity: int, camera: str, frame: int) -> Feature:
        """A noisy sighting of the given ground-truth identity."""
        vec = self.prototypes[identity]
        if self.noise > 0:
            scale = self.noise / math.sqrt(self.dim)
            vec = vec + scale * self._rng.standard_normal(self.dim)
        return Feature(vector=vec, camera=camera, frame=frame)
