"""Synthetic datasets with known structure.

Three generators: a correlated scalar pair family built by summing two
bivariate Gaussians (its mutual information has a closed form), two
interleaved spirals for view-noise transfer studies, and labeled Gaussian
blobs for sampler and probe tests. All generators are pure functions of a
seeded rng; datasets are immutable after creation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


@dataclass
class GaussianPairFamily:
    """Scalar pair (X, Y) = Z + E with Z, E bivariate centered Gaussians.

    The marginal pair is jointly Gaussian with covariance sigma_z + sigma_eps,
    so the mutual information between X and Y is available analytically.
    """

    sigma_z: np.ndarray = field(
        default_factory=lambda: np.array([[1.0, -0.5], [-0.5, 1.0]]))
    sigma_eps: np.ndarray = field(
        default_factory=lambda: np.array([[1.0, 0.9], [0.9, 1.0]]))

    def __post_init__(self):
        self.sigma_z = np.asarray(self.sigma_z, dtype=np.float64)
        self.sigma_eps = np.asarray(self.sigma_eps, dtype=np.float64)
        for name, mat in (("sigma_z", self.sigma_z), ("sigma_eps", self.sigma_eps)):
            if mat.shape != (2, 2) or not np.allclose(mat, mat.T):
                raise ValueError(f"{name} must be a symmetric 2x2 matrix")
            _psd_factor(mat, name)

    @property
    def sigma(self) -> np.ndarray:
        return self.sigma_z + self.sigma_eps


def _psd_factor(mat: np.ndarray, name: str = "covariance") -> np.ndarray:
    """Square root of a PSD matrix; the zero matrix is allowed."""
    eigvals, eigvecs = np.linalg.eigh(mat)
    if np.any(eigvals < -1e-12 * max(1.0, float(np.abs(eigvals).max()))):
        raise ValueError(f"{name} is not positive semi-definite")
    return eigvecs @ np.diag(np.sqrt(np.clip(eigvals, 0.0, None)))


def sample_gaussian_pairs(family: GaussianPairFamily, n: int,
                          rng: np.random.Generator) -> np.ndarray:
    """n pairs (x, y), built as Z + E with each factor drawn separately."""
    lz = _psd_factor(family.sigma_z, "sigma_z")
    le = _psd_factor(family.sigma_eps, "sigma_eps")
    z = rng.standard_normal((n, 2)) @ lz.T
    e = rng.standard_normal((n, 2)) @ le.T
    return z + e


def analytic_gaussian_mi(family: GaussianPairFamily) -> float:
    """Closed-form MI (in nats) of the jointly Gaussian pair."""
    s = family.sigma
    ratio = (s[0, 1] * s[1, 0]) / (s[0, 0] * s[1, 1])
    return -0.5 * float(np.log(1.0 - ratio))


@dataclass
class SpiralDataset:
    """Two interleaved spiral arms of 2-D points inside [-2, 2]^2."""

    points: np.ndarray
    labels: np.ndarray

    @property
    def n(self) -> int:
        return self.points.shape[0]


_SPIRAL_T_MIN = 0.75 * np.pi
_SPIRAL_T_MAX = 3.0 * np.pi


def make_spirals(n: int, rng: np.random.Generator) -> SpiralDataset:
    """Two Archimedean arms of n/2 points each, the second rotated by pi.

    Angles are uniform over [3*pi/4, 3*pi] and radius is proportional to
    angle, so the arms live between radius 0.5 and 2 and every coordinate
    stays inside [-2, 2]. The innermost three-quarter turn is skipped:
    arms that spiral all the way into the origin come arbitrarily close to
    each other there, and moderate view noise then merges them into one
    collision component, destroying the arm structure the transfer task
    needs.
    """
    if n % 2 != 0:
        raise ValueError("spiral dataset size must be even")
    half = n // 2

    def arm(rotation: float) -> np.ndarray:
        t = rng.uniform(_SPIRAL_T_MIN, _SPIRAL_T_MAX, size=half)
        radius = t / _SPIRAL_T_MAX * 2.0
        return np.stack([radius * np.cos(t + rotation),
                         radius * np.sin(t + rotation)], axis=1)

    points = np.concatenate([arm(0.0), arm(np.pi)], axis=0)
    labels = np.concatenate([np.zeros(half, dtype=np.intp), np.ones(half, dtype=np.intp)])
    return SpiralDataset(points=points, labels=labels)


def make_blobs(n_per_blob: int, centers: np.ndarray, spread: float,
               rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian blobs around the given centers, with labels."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    points, labels = [], []
    for j, c in enumerate(centers):
        points.append(c[None, :] + spread * rng.standard_normal((n_per_blob, centers.shape[1])))
        labels.append(np.full(n_per_blob, j, dtype=np.intp))
    return np.concatenate(points, axis=0), np.concatenate(labels)


def blob_grid_centers(k: int, dim: int, scale: float = 6.0) -> np.ndarray:
    """k well-separated centers placed on coordinate axes of R^dim."""
    centers = np.zeros((k, dim))
    for j in range(k):
        axis = j % dim
        sign = 1.0 if (j // dim) % 2 == 0 else -1.0
        centers[j, axis] = sign * scale * (1 + j // (2 * dim))
    return centers


def export_points_csv(path, points: np.ndarray, labels: np.ndarray) -> None:
    """Write a dataset as CSV with header index,label,x0,x1,..."""
    points = np.atleast_2d(points)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "label"] + [f"x{j}" for j in range(points.shape[1])])
        for i, (p, lab) in enumerate(zip(points, labels)):
            writer.writerow([i, int(lab)] + [format(v, ".17g") for v in p])
