"""Per-datum embedding store with exponential moving-average updates."""

from __future__ import annotations

import numpy as np


class MemoryBank:
    """N x d matrix of stored embeddings, row i belonging to datum i.

    Updates blend the stored row with a fresh embedding at rate alpha:
    row <- alpha * row + (1 - alpha) * embedding, optionally re-normalized
    to unit length afterwards. Single-writer: reads during an epoch see the
    previous values for rows not yet updated.
    """

    def __init__(self, entries: np.ndarray, alpha: float, renormalize: bool = False):
        entries = np.asarray(entries, dtype=np.float64)
        if entries.ndim != 2:
            raise ValueError("bank entries must be an N x d matrix")
        if not 0.0 <= alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        self.entries = entries.copy()
        self.alpha = alpha
        self.renormalize = renormalize
        if renormalize:
            self._renormalize_rows(np.arange(entries.shape[0]))

    @classmethod
    def zeros(cls, n: int, d: int, alpha: float, renormalize: bool = False) -> "MemoryBank":
        bank = cls.__new__(cls)
        bank.entries = np.zeros((n, d))
        bank.alpha = alpha
        bank.renormalize = renormalize
        return bank

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]

    def _renormalize_rows(self, indices) -> None:
        rows = self.entries[indices]
        norms = np.linalg.norm(rows, axis=-1, keepdims=True)
        norms[norms == 0.0] = 1.0
        self.entries[indices] = rows / norms

    def update(self, index: int, embedding: np.ndarray) -> None:
        """Blend one row toward a new embedding."""
        if not 0 <= index < self.n:
            raise IndexError(f"bank index {index} out of range [0, {self.n})")
        embedding = np.asarray(embedding, dtype=np.float64)
        if embedding.shape != (self.dim,):
            raise ValueError(f"embedding dimension {embedding.shape} != ({self.dim},)")
        self.entries[index] = self.alpha * self.entries[index] + (1.0 - self.alpha) * embedding
        if self.renormalize:
            self._renormalize_rows([index])

    def update_batch(self, indices: np.ndarray, embeddings: np.ndarray) -> None:
        """Blend several rows at once; each index updated at most once."""
        indices = np.asarray(indices, dtype=np.intp)
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if np.any(indices < 0) or np.any(indices >= self.n):
            raise IndexError("bank index out of range")
        self.entries[indices] = self.alpha * self.entries[indices] + (1.0 - self.alpha) * embeddings
        if self.renormalize:
            self._renormalize_rows(indices)


def rank_by_similarity(bank: MemoryBank | np.ndarray, query: np.ndarray) -> np.ndarray:
    """All row indices ordered by ascending L2 distance to the query.

    Ties break by ascending index so rankings are deterministic. For
    unit-norm rows this ordering coincides with descending dot product.
    """
    entries = bank.entries if isinstance(bank, MemoryBank) else np.asarray(bank)
    query = np.asarray(query, dtype=np.float64)
    d2 = np.sum((entries - query[None, :]) ** 2, axis=1)
    return np.lexsort((np.arange(entries.shape[0]), d2))


def weighted_view_encode(encoder, viewed_points: np.ndarray, weights) -> np.ndarray:
    """Weighted sum of per-view embeddings: sum_m w[m] * g(x_m).

    A bank row updated m times at rate alpha from a zero start equals
    (1 - alpha) times this sum with weights (alpha^(m-1), ..., alpha, 1).
    """
    viewed_points = np.atleast_2d(np.asarray(viewed_points, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64)
    if len(viewed_points) != len(weights):
        raise ValueError(f"{len(viewed_points)} views but {len(weights)} weights")
    embs = encoder.encode_array(viewed_points)
    return np.sum(weights[:, None] * embs, axis=0)
