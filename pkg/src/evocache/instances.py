"""Workload instances: trace feature extraction, clustering, classification.

Traces are mapped to 15-dimensional feature vectors computed over a prefix
(default 50,000 requests), clustered with seeded k-means++ / Lloyd in
z-scored space, and classified at runtime by nearest centroid with a
per-cluster novelty radius.  Model files are self-describing JSON so the
feature list is versioned alongside the centroids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .engine import nearest_rank
from .trace import Request

FEATURE_SET_VERSION = "evocache-features-v1"

FEATURE_NAMES = (
    "total_requests",
    "unique_objects",
    "unique_to_total_ratio",
    "one_hit_wonder_fraction",
    "mean_object_size",
    "max_object_size",
    "p50_object_size",
    "p90_object_size",
    "mean_interarrival",
    "p50_interarrival",
    "p90_interarrival",
    "mean_reuse_distance",
    "access_count_gini",
    "top1pct_request_fraction",
    "size_weighted_unique_fraction",
)

DEFAULT_PREFIX = 50_000
DEFAULT_NOVELTY_MULTIPLIER = 1.5


class _Bit:
    """Fenwick tree over request positions; tracks each id's latest access."""

    __slots__ = ("n", "tree")

    def __init__(self, n: int):
        self.n = n
        self.tree = [0] * (n + 1)

    def add(self, i: int, delta: int) -> None:
        i += 1
        while i <= self.n:
            self.tree[i] += delta
            i += i & -i

    def prefix(self, i: int) -> int:
        """Sum of marks at positions 0..i inclusive."""
        i += 1
        total = 0
        while i > 0:
            total += self.tree[i]
            i -= i & -i
        return total


def _percentile(sorted_values: Sequence[float], p: float) -> float:
    if len(sorted_values) == 0:
        return 0.0
    return float(sorted_values[nearest_rank(p, len(sorted_values)) - 1])


def extract_features(trace: Iterable[Request], prefix_len: int = DEFAULT_PREFIX) -> np.ndarray:
    """Feature vector over the first min(prefix_len, len) requests.

    Reuse distance is the number of distinct other ids seen between
    consecutive accesses to the same id, averaged over all re-accesses
    in the prefix (tracked exactly with a Fenwick tree over positions).
    """
    prefix: list[Request] = []
    for req in trace:
        prefix.append(req)
        if len(prefix) >= prefix_len:
            break
    if not prefix:
        raise ValueError("cannot extract features from an empty trace")

    total = len(prefix)
    counts: dict[str, int] = {}
    sizes: dict[str, int] = {}
    last_pos: dict[str, int] = {}
    gaps: list[int] = []
    reuse_sum = 0
    reuse_events = 0
    total_bytes = 0
    bit = _Bit(total)
    for i, req in enumerate(prefix):
        oid = req.object_id
        total_bytes += req.size
        counts[oid] = counts.get(oid, 0) + 1
        sizes[oid] = req.size
        p = last_pos.get(oid)
        if p is not None:
            gaps.append(i - p)
            reuse_sum += bit.prefix(i - 1) - bit.prefix(p)
            reuse_events += 1
            bit.add(p, -1)
        bit.add(i, +1)
        last_pos[oid] = i

    unique = len(counts)
    one_hit = sum(1 for c in counts.values() if c == 1)
    size_values = sorted(sizes.values())
    gap_values = sorted(gaps)
    count_values = sorted(counts.values())

    # Gini over per-object access counts (ascending ranks).
    n = len(count_values)
    count_sum = sum(count_values)
    if n > 1 and count_sum > 0:
        weighted = sum((i + 1) * c for i, c in enumerate(count_values))
        gini = (2.0 * weighted) / (n * count_sum) - (n + 1) / n
    else:
        gini = 0.0

    top_k = max(1, math.ceil(0.01 * unique))
    by_popularity = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    top_fraction = sum(c for _, c in by_popularity[:top_k]) / total

    footprint = sum(sizes.values())
    return np.array([
        float(total),
        float(unique),
        unique / total,
        one_hit / unique,
        footprint / unique,
        float(max(size_values)),
        _percentile(size_values, 0.5),
        _percentile(size_values, 0.9),
        (sum(gap_values) / len(gap_values)) if gap_values else 0.0,
        _percentile(gap_values, 0.5),
        _percentile(gap_values, 0.9),
        (reuse_sum / reuse_events) if reuse_events else 0.0,
        gini,
        top_fraction,
        footprint / total_bytes,
    ], dtype=float)


@dataclass(frozen=True)
class ClusterModel:
    version: str
    seed: int
    feature_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    centroids: np.ndarray  # (k, n_features), in standardized space
    radii: np.ndarray      # per-cluster novelty radius (p95 member distance)
    novelty_multiplier: float = DEFAULT_NOVELTY_MULTIPLIER

    @property
    def k(self) -> int:
        return len(self.centroids)

    def standardize(self, vector: np.ndarray) -> np.ndarray:
        return (np.asarray(vector, dtype=float) - self.mean) / self.std

    def to_json(self) -> dict:
        return {
            "version": self.version,
            "seed": self.seed,
            "feature_names": list(self.feature_names),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "centroids": self.centroids.tolist(),
            "radii": self.radii.tolist(),
            "novelty_multiplier": self.novelty_multiplier,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ClusterModel":
        return cls(
            version=doc["version"],
            seed=int(doc["seed"]),
            feature_names=tuple(doc["feature_names"]),
            mean=np.array(doc["mean"], dtype=float),
            std=np.array(doc["std"], dtype=float),
            centroids=np.array(doc["centroids"], dtype=float),
            radii=np.array(doc["radii"], dtype=float),
            novelty_multiplier=float(doc.get("novelty_multiplier", DEFAULT_NOVELTY_MULTIPLIER)),
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "ClusterModel":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def _kmeans_pp_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(data)
    chosen = [int(rng.integers(n))]
    dist2 = np.sum((data - data[chosen[0]]) ** 2, axis=1)
    for _ in range(k - 1):
        total = dist2.sum()
        if total <= 0:
            # all remaining mass at chosen points: take the lowest unchosen index
            for idx in range(n):
                if idx not in chosen:
                    chosen.append(idx)
                    break
            else:
                chosen.append(chosen[-1])
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(dist2), r, side="right"))
            idx = min(idx, n - 1)
            chosen.append(idx)
        dist2 = np.minimum(dist2, np.sum((data - data[chosen[-1]]) ** 2, axis=1))
    return data[chosen].copy()


def _assign(data: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1)


def kmeans(vectors, k: int, seed: int = 0, max_iters: int = 300,
           novelty_multiplier: float = DEFAULT_NOVELTY_MULTIPLIER,
           inertia_history: Optional[list] = None) -> ClusterModel:
    """Seeded k-means++ with Lloyd iterations to an assignment fixpoint.

    Inputs are z-scored first (a zero-variance feature gets std 1); empty
    clusters keep their previous centroid.  Deterministic for a fixed seed.
    Pass ``inertia_history`` to collect the per-iteration inertia.
    """
    raw = np.asarray(list(vectors), dtype=float)
    n = len(raw)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of vectors ({n})")
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    std = np.where(std == 0, 1.0, std)
    data = (raw - mean) / std

    def _inertia(cents, labs):
        return float(((data - cents[labs]) ** 2).sum())

    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp_init(data, k, rng)
    labels = _assign(data, centroids)
    if inertia_history is not None:
        inertia_history.append(_inertia(centroids, labels))
    for _ in range(max_iters):
        new_centroids = centroids.copy()
        for c in range(k):
            members = data[labels == c]
            if len(members):
                new_centroids[c] = members.mean(axis=0)
        new_labels = _assign(data, new_centroids)
        centroids = new_centroids
        if inertia_history is not None:
            inertia_history.append(_inertia(centroids, new_labels))
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels

    radii = np.zeros(k)
    for c in range(k):
        members = data[labels == c]
        if len(members):
            dists = np.sqrt(((members - centroids[c]) ** 2).sum(axis=1))
            radii[c] = _percentile(np.sort(dists), 0.95)
    return ClusterModel(
        version=FEATURE_SET_VERSION,
        seed=seed,
        feature_names=FEATURE_NAMES,
        mean=mean,
        std=std,
        centroids=centroids,
        radii=radii,
        novelty_multiplier=novelty_multiplier,
    )


def assignments(model: ClusterModel, vectors) -> np.ndarray:
    data = np.array([model.standardize(v) for v in vectors])
    return _assign(data, model.centroids)


@dataclass(frozen=True)
class Classification:
    cluster: int
    distance: float
    novel: bool

    def label(self) -> str:
        return "novel" if self.novel else str(self.cluster)


def classify(model: ClusterModel, vector) -> Classification:
    """Nearest centroid in standardized space; novel when the distance
    exceeds that cluster's novelty radius times the model multiplier."""
    z = model.standardize(vector)
    d2 = ((model.centroids - z) ** 2).sum(axis=1)
    cluster = int(d2.argmin())
    distance = float(math.sqrt(d2[cluster]))
    threshold = model.radii[cluster] * model.novelty_multiplier
    return Classification(cluster, distance, distance > threshold)


def inertia(model: ClusterModel, vectors) -> float:
    data = np.array([model.standardize(v) for v in vectors])
    labels = _assign(data, model.centroids)
    return float(((data - model.centroids[labels]) ** 2).sum())
