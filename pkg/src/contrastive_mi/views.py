"""Stochastic view functions: lossy transformations of data points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ViewFunction:
    """A transformation applied to data before encoding.

    Kinds:
      identity                  lossless, returns the point unchanged
      additive-uniform-noise    adds per-coordinate offsets from U(0, eta)
      coordinate-channel        keeps only the selected coordinates
      random-permute-coordinates  shuffles coordinate order per datum
    """

    kind: str = "identity"
    eta: float = 0.0
    selector: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("identity", "additive-uniform-noise", "coordinate-channel",
                             "random-permute-coordinates"):
            raise ValueError(f"unknown view kind {self.kind!r}")
        if self.eta < 0:
            raise ValueError("noise level eta must be non-negative")


def apply_view(view: ViewFunction, points: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Apply a view function to a batch of points; never mutates the input."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if view.kind == "identity":
        return points.copy()
    if view.kind == "additive-uniform-noise":
        if view.eta == 0.0:
            return points.copy()
        return points + rng.uniform(0.0, view.eta, size=points.shape)
    if view.kind == "coordinate-channel":
        if not view.selector:
            raise ValueError("coordinate-channel view needs a non-empty selector")
        return points[:, list(view.selector)].copy()
    # random-permute-coordinates
    out = np.empty_like(points)
    for i in range(points.shape[0]):
        out[i] = points[i, rng.permutation(points.shape[1])]
    return out
