"""Restricted negative and close-neighbor sampling over a memory bank.

Negative pools are defined by rank percentiles of embedding-space distance
to the anchor: a ball keeps the closest percent, a ring drops the innermost
percent of the ball, and a cave removes the anchor's K-means cluster from
the ball. Close-neighbor sets reuse the same geometry to pick items pulled
toward the anchor instead of pushed away. Anneal schedules move percents
linearly over training.

Negatives are drawn i.i.d. with replacement from their pool. The anchor
index is always excluded from negative pools and always included in close
sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bank import MemoryBank


class DegeneratePoolError(ValueError):
    """A restriction left no candidates to sample from."""


@dataclass
class AnnealSchedule:
    """Linear interpolation between two percents, clamped at the endpoints."""

    start_percent: float
    end_percent: float
    start_epoch: int
    end_epoch: int

    def __post_init__(self):
        if self.end_epoch < self.start_epoch:
            raise ValueError("anneal end_epoch precedes start_epoch")


def anneal_value(schedule: AnnealSchedule | None, epoch: float) -> float | None:
    """Current percent under the schedule; None when no schedule is set."""
    if schedule is None:
        return None
    if epoch <= schedule.start_epoch:
        return schedule.start_percent
    if epoch >= schedule.end_epoch:
        return schedule.end_percent
    span = schedule.end_epoch - schedule.start_epoch
    frac = (epoch - schedule.start_epoch) / span
    return schedule.start_percent + frac * (schedule.end_percent - schedule.start_percent)


@dataclass
class NegativeSpec:
    """Where negatives come from: marginal, ball, ring, or cave.

    ``outer_percent`` bounds the pool to the closest p% of the bank;
    ``inner_percent`` (ring only) opens a hole of the innermost ranks.
    A marginal spec is exactly a ball at 100%.
    """

    kind: str = "marginal"
    outer_percent: float = 100.0
    inner_percent: float = 1.0
    kmeans_k: int = 8
    kmeans_restarts: int = 10
    anneal: AnnealSchedule | None = None
    anneal_inner: AnnealSchedule | None = None

    def __post_init__(self):
        if self.kind not in ("marginal", "ball", "ring", "cave"):
            raise ValueError(f"unknown negative kind {self.kind!r}")
        if not 0.0 < self.outer_percent <= 100.0:
            raise ValueError("outer_percent must lie in (0, 100]")
        if self.kind == "ring" and not 0.0 < self.inner_percent < self.outer_percent:
            raise ValueError("ring requires 0 < inner_percent < outer_percent")

    def effective_percents(self, epoch: float) -> tuple[float, float]:
        outer = anneal_value(self.anneal, epoch)
        inner = anneal_value(self.anneal_inner, epoch)
        return (outer if outer is not None else self.outer_percent,
                inner if inner is not None else self.inner_percent)


@dataclass
class NeighborSpec:
    """Which items count as close neighbors: none, s-neigh, or k-neigh.

    An s-neighborhood keeps the closest ``close_percent`` of the bank; a
    k-neighborhood keeps the anchor's K-means cluster. The anchor itself is
    always a member.
    """

    kind: str = "none"
    close_percent: float = 1.0
    kmeans_k: int = 8
    neighbor_count: int = 1
    anneal: AnnealSchedule | None = None

    def __post_init__(self):
        if self.kind not in ("none", "s-neigh", "k-neigh"):
            raise ValueError(f"unknown neighbor kind {self.kind!r}")
        if self.kind == "s-neigh" and not 0.0 < self.close_percent <= 100.0:
            raise ValueError("close_percent must lie in (0, 100]")

    def effective_percent(self, epoch: float) -> float:
        pct = anneal_value(self.anneal, epoch)
        return pct if pct is not None else self.close_percent

    def effective_count(self, epoch: float) -> int:
        # Annealing a neighborhood from empty grows the draw count with the
        # percent: zero percent means the close set is just the anchor.
        if self.kind == "none":
            return 1
        if self.anneal is not None and self.effective_percent(epoch) <= 0.0:
            return 1
        return max(1, self.neighbor_count)


def _pool_size(percent: float, n: int) -> int:
    return max(1, min(n, int(round(percent * n / 100.0))))


def closest_pool(distances: np.ndarray, m: int) -> np.ndarray:
    """Indices of the m closest entries, ties broken by ascending index.

    Equivalent to the first m entries of the full similarity ranking but
    computed with a partial partition plus exact handling at the boundary.
    """
    n = distances.shape[0]
    if m >= n:
        return np.arange(n)
    part = np.argpartition(distances, m - 1)
    boundary = distances[part[m - 1]]
    strictly = np.flatnonzero(distances < boundary)
    at_boundary = np.flatnonzero(distances == boundary)
    need = m - strictly.size
    return np.sort(np.concatenate([strictly, at_boundary[:need]]))


def _distances_to(bank: MemoryBank, anchor_embedding: np.ndarray) -> np.ndarray:
    diff = bank.entries - np.asarray(anchor_embedding, dtype=np.float64)[None, :]
    return np.sum(diff * diff, axis=1)


def negative_pool(spec: NegativeSpec, bank: MemoryBank, anchor_embedding: np.ndarray,
                  anchor_index: int, clusters: np.ndarray | None = None,
                  epoch: float = 0.0) -> np.ndarray:
    """The candidate index set negatives are drawn from, anchor excluded."""
    n = bank.n
    outer_pct, inner_pct = spec.effective_percents(epoch)
    if spec.kind == "marginal" or (spec.kind == "ball" and outer_pct >= 100.0):
        pool = np.arange(n)
    else:
        distances = _distances_to(bank, anchor_embedding)
        m_out = _pool_size(outer_pct, n)
        outer = closest_pool(distances, m_out)
        if spec.kind == "ball":
            pool = outer
        elif spec.kind == "ring":
            m_in = _pool_size(inner_pct, n)
            if m_in >= m_out:
                raise DegeneratePoolError(
                    f"ring with inner {inner_pct:.3g}% >= outer {outer_pct:.3g}% on n={n}")
            inner = closest_pool(distances, m_in)
            pool = np.setdiff1d(outer, inner, assume_unique=True)
        else:  # cave
            if clusters is None:
                raise ValueError("cave sampling needs cluster assignments")
            same_cluster = np.flatnonzero(clusters == clusters[anchor_index])
            pool = np.setdiff1d(outer, same_cluster, assume_unique=True)
    pool = pool[pool != anchor_index]
    if pool.size == 0:
        raise DegeneratePoolError(
            f"negative spec {spec.kind} (outer={outer_pct:.3g}%) leaves an empty pool "
            f"around index {anchor_index}")
    return pool


def sample_negatives(spec: NegativeSpec, bank: MemoryBank, anchor_embedding: np.ndarray,
                     anchor_index: int, count: int, rng: np.random.Generator,
                     clusters: np.ndarray | None = None, epoch: float = 0.0) -> np.ndarray:
    """Draw ``count`` negative indices i.i.d. uniformly from the spec's pool."""
    pool = negative_pool(spec, bank, anchor_embedding, anchor_index, clusters, epoch)
    return pool[rng.integers(0, pool.size, size=count)]


def close_set(spec: NeighborSpec, bank: MemoryBank, anchor_embedding: np.ndarray,
              anchor_index: int, clusters: np.ndarray | None = None,
              epoch: float = 0.0) -> np.ndarray:
    """The close-neighbor index set; always contains the anchor."""
    if spec.kind == "none":
        return np.array([anchor_index], dtype=np.intp)
    if spec.kind == "s-neigh":
        pct = spec.effective_percent(epoch)
        if pct <= 0.0:
            return np.array([anchor_index], dtype=np.intp)
        distances = _distances_to(bank, anchor_embedding)
        members = closest_pool(distances, _pool_size(pct, bank.n))
    else:  # k-neigh
        if clusters is None:
            raise ValueError("k-neigh sampling needs cluster assignments")
        members = np.flatnonzero(clusters == clusters[anchor_index])
    if anchor_index not in members:
        members = np.concatenate([members, [anchor_index]])
    return np.asarray(members, dtype=np.intp)


def sample_close_neighbors(spec: NeighborSpec, bank: MemoryBank, anchor_embedding: np.ndarray,
                           anchor_index: int, count: int, rng: np.random.Generator,
                           clusters: np.ndarray | None = None,
                           epoch: float = 0.0) -> np.ndarray:
    """Anchor index plus ``count`` i.i.d. uniform draws from the close set.

    With spec 'none', or when the close set holds nothing besides the
    anchor, the result degrades gracefully to just the anchor.
    """
    members = close_set(spec, bank, anchor_embedding, anchor_index, clusters, epoch)
    others = members[members != anchor_index]
    if spec.kind == "none" or others.size == 0 or count <= 0:
        return np.array([anchor_index], dtype=np.intp)
    draws = others[rng.integers(0, others.size, size=count)]
    return np.concatenate([[anchor_index], draws]).astype(np.intp)


# -- K-means ---------------------------------------------------------------------


def _kmeanspp_centroids(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    first = rng.integers(0, n)
    centroids[0] = points[first]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            centroids[j] = points[rng.integers(0, n)]
            continue
        probs = d2 / total
        idx = rng.choice(n, p=probs)
        centroids[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def lloyd_iterations(points: np.ndarray, centroids: np.ndarray,
                     max_iter: int = 100) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Run Lloyd updates until assignments stop changing.

    Returns (labels, centroids, inertia trace). Inertia is the within-
    cluster sum of squares and never increases between iterations.
    """
    centroids = centroids.copy()
    k = centroids.shape[0]
    labels = None
    trace: list[float] = []
    for _ in range(max_iter):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        trace.append(float(d2[np.arange(points.shape[0]), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            mask = labels == j
            if mask.any():
                centroids[j] = points[mask].mean(axis=0)
            else:
                # Re-seed an empty cluster at the point farthest from its centroid.
                worst = int(np.argmax(d2[np.arange(points.shape[0]), labels]))
                centroids[j] = points[worst]
    return labels, centroids, trace


def kmeans(points: np.ndarray, k: int, restarts: int, rng: np.random.Generator) -> np.ndarray:
    """Cluster assignments from the best of ``restarts`` seeded Lloyd runs."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points {n}")
    best_labels, best_inertia = None, np.inf
    for _ in range(max(1, restarts)):
        centroids = _kmeanspp_centroids(points, k, rng)
        labels, _, trace = lloyd_iterations(points, centroids)
        if trace[-1] < best_inertia:
            best_inertia = trace[-1]
            best_labels = labels
    return best_labels
