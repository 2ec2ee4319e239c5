"""Lower bounds on mutual information with pluggable witness functions.

The estimator chain, loosest to tightest machinery:

  estimate_ba       log-density ratio of a variational conditional
  estimate_uba      witness minus an estimated log-partition
  estimate_nwj      witness minus a linearized partition (1/e scaling)
  estimate_infonce  softmax-style log ratio over one positive and K-1
                    negatives, computed with logsumexp
  estimate_vince    the InfoNCE arithmetic with negatives drawn from a
                    restricted distribution; always a looser bound

All estimators return differentiable scalars so witnesses can be trained
by gradient ascent on the bound. They are pure functions of their inputs
and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Tensor
from .nets import Linear


class EstimateError(RuntimeError):
    """An estimator could not produce a finite value."""


# -- witness functions ---------------------------------------------------------------


class ScaledDotWitness:
    """f(x, y) = x . y / omega on embedding vectors; omega > 0."""

    kind = "scaled-dot"

    def __init__(self, omega: float = 0.07):
        if omega <= 0:
            raise ValueError("temperature omega must be positive")
        self.omega = omega

    def pair_scores(self, x: Tensor, y: Tensor) -> Tensor:
        return ad.rowwise_dot(x, y) / self.omega

    def bank_scores(self, x: Tensor, stack: np.ndarray) -> Tensor:
        return ad.paired_dot(x, stack) / self.omega

    def cross_scores(self, x: Tensor, y: Tensor) -> Tensor:
        """All-pairs score matrix [Bx, By]; gradients reach both sides."""
        return ad.matmul(x, ad.transpose(y)) / self.omega

    def parameters(self) -> list[Tensor]:
        return []


class DotWitness(ScaledDotWitness):
    """Plain dot product (omega fixed at 1)."""

    kind = "dot"

    def __init__(self):
        super().__init__(omega=1.0)


class BilinearWitness:
    """f(x, y) = x^T W y / omega with a trainable square matrix W."""

    kind = "bilinear"

    def __init__(self, dim: int, rng: np.random.Generator, omega: float = 0.07):
        if omega <= 0:
            raise ValueError("temperature omega must be positive")
        self.omega = omega
        self.w = Tensor(np.eye(dim) + 0.01 * rng.standard_normal((dim, dim)),
                        requires_grad=True)

    def _project(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.w)

    def pair_scores(self, x: Tensor, y: Tensor) -> Tensor:
        return ad.rowwise_dot(self._project(x), y) / self.omega

    def bank_scores(self, x: Tensor, stack: np.ndarray) -> Tensor:
        return ad.paired_dot(self._project(x), stack) / self.omega

    def cross_scores(self, x: Tensor, y: Tensor) -> Tensor:
        return ad.matmul(self._project(x), ad.transpose(y)) / self.omega

    def parameters(self) -> list[Tensor]:
        return [self.w]


class ConcatWitness:
    """MLP head over the concatenated pair [x; y], projecting to a scalar.

    depth == 0 gives the purely linear variant; deeper heads interleave
    ReLU layers with the stated hidden width.
    """

    kind = "concat-mlp"

    def __init__(self, dim: int, rng: np.random.Generator, depth: int = 1,
                 hidden: int = 128):
        self.depth = depth
        dims = [2 * dim] + [hidden] * depth + [1]
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(dims) - 1)]
        if depth == 0:
            self.kind = "concat-linear"

    def _head(self, h: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = ad.relu(h)
        return h

    def pair_scores(self, x: Tensor, y: Tensor) -> Tensor:
        out = self._head(ad.concat_cols([x, y]))
        return ad.reshape(out, (x.shape[0],))

    def bank_scores(self, x: Tensor, stack: np.ndarray) -> Tensor:
        stack = np.asarray(stack, dtype=np.float64)
        if stack.ndim == 2:
            stack = np.broadcast_to(stack[None, :, :], (x.shape[0],) + stack.shape)
        b, k, _ = stack.shape
        out = self._head(ad.pair_concat(x, stack))
        return ad.reshape(out, (b, k))

    def cross_scores(self, x: Tensor, y: Tensor) -> Tensor:
        out = self._head(ad.tile_pairs(x, y))
        return ad.reshape(out, (x.shape[0], y.shape[0]))

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def make_witness(kind: str, dim: int, rng: np.random.Generator,
                 omega: float = 0.07, mlp_depth: int = 2, hidden: int = 128):
    """Witness factory keyed by kind name."""
    if kind == "dot":
        return DotWitness()
    if kind == "scaled-dot":
        return ScaledDotWitness(omega)
    if kind == "bilinear":
        return BilinearWitness(dim, rng, omega)
    if kind == "concat-linear":
        return ConcatWitness(dim, rng, depth=0)
    if kind == "concat-mlp":
        return ConcatWitness(dim, rng, depth=mlp_depth, hidden=hidden)
    raise ValueError(f"unknown witness kind {kind!r}")


# -- sample containers ----------------------------------------------------------------


@dataclass
class BatchSample:
    """One positive pair plus K-1 negatives, all d-dim embeddings.

    ``x`` and ``positive`` are [B, d]; ``negatives`` is [B, K-1, d]. K
    counts the positive, so K >= 2 requires at least one negative.
    """

    x: np.ndarray
    positive: np.ndarray
    negatives: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=np.float64))
        self.positive = np.atleast_2d(np.asarray(self.positive, dtype=np.float64))
        self.negatives = np.asarray(self.negatives, dtype=np.float64)
        if self.negatives.ndim == 2:
            self.negatives = self.negatives[None, :, :] if self.x.shape[0] == 1 else self.negatives
        if self.negatives.ndim != 3 or self.negatives.shape[1] < 1:
            raise ValueError("estimation needs K >= 2 (at least one negative)")
        if not (self.x.shape == self.positive.shape
                and self.negatives.shape[0] == self.x.shape[0]
                and self.negatives.shape[2] == self.x.shape[1]):
            raise ValueError("embedding shapes disagree across the batch")

    @property
    def k(self) -> int:
        return self.negatives.shape[1] + 1


# -- estimators -------------------------------------------------------------------------


def estimate_ba(pairs: np.ndarray, variational_logdensity, marginal_logdensity) -> float:
    """Monte-Carlo mean of log q(x|y) - log p(x) over positive pairs.

    ``pairs`` is [n, 2] with columns (x, y); both densities must be
    evaluable in closed form on scalars.
    """
    pairs = np.atleast_2d(np.asarray(pairs, dtype=np.float64))
    lq = np.asarray(variational_logdensity(pairs[:, 0], pairs[:, 1]), dtype=np.float64)
    lp = np.asarray(marginal_logdensity(pairs[:, 0]), dtype=np.float64)
    if not (np.all(np.isfinite(lq)) and np.all(np.isfinite(lp))):
        raise EstimateError("variational or marginal log-density is non-finite")
    return float(np.mean(lq - lp))


def estimate_uba(pairs: np.ndarray, witness, marginal_x: np.ndarray) -> float:
    """Witness mean on the joint minus the mean estimated log-partition.

    The partition Z(y) = E_p(x)[e^f(x,y)] is estimated for every pair with
    the provided marginal x-samples via a logsumexp average.
    """
    pairs = np.atleast_2d(np.asarray(pairs, dtype=np.float64))
    marginal_x = np.atleast_2d(np.asarray(marginal_x, dtype=np.float64))
    if pairs.shape[1] != 2:
        raise ValueError("estimate_uba expects scalar pairs [n, 2]")
    joint = float(witness.pair_scores(Tensor(pairs[:, :1]), Tensor(pairs[:, 1:2])).data.mean())
    m = marginal_x.shape[0]
    log_z = np.empty(pairs.shape[0])
    for i, y in enumerate(pairs[:, 1]):
        ys = np.full((m, 1), y)
        scores = witness.pair_scores(Tensor(marginal_x), Tensor(ys)).data
        log_z[i] = ad.logsumexp_array(scores) - math.log(m)
    return joint - float(np.mean(log_z))


def estimate_nwj(joint_pairs: np.ndarray, marginal_pairs: np.ndarray, witness) -> Tensor:
    """mean f on the joint minus (1/e) mean e^f on the product of marginals.

    The marginal pairs must be fresh draws, not reused joint samples.
    Overflow of e^f raises ``EstimateError`` advising a witness rescale.
    """
    joint_pairs = np.atleast_2d(np.asarray(joint_pairs, dtype=np.float64))
    marginal_pairs = np.atleast_2d(np.asarray(marginal_pairs, dtype=np.float64))
    if joint_pairs.shape[0] < 1 or marginal_pairs.shape[0] < 1:
        raise ValueError("estimate_nwj needs at least one joint and one marginal pair")
    half = joint_pairs.shape[1] // 2
    f_joint = witness.pair_scores(Tensor(joint_pairs[:, :half]), Tensor(joint_pairs[:, half:]))
    f_marg = witness.pair_scores(Tensor(marginal_pairs[:, :half]), Tensor(marginal_pairs[:, half:]))
    try:
        partition = ad.mean_all(ad.exp(f_marg))
    except NonFiniteError as err:
        raise EstimateError(
            "e^f overflowed while estimating the partition; rescale the witness "
            "(e.g. increase omega)") from err
    return ad.mean_all(f_joint) - partition * (1.0 / math.e)


def estimate_infonce(batch: BatchSample, witness) -> Tensor:
    """Softmax-style lower bound: f(x, y1) - logsumexp_j f(x, y_j) + log K.

    The positive pair sits inside its own denominator (j = 1), which caps
    the estimate at log K. The normalization uses logsumexp throughout;
    no explicit softmax is ever formed.
    """
    x = Tensor(batch.x)
    f_pos = witness.pair_scores(x, Tensor(batch.positive))
    f_neg = witness.bank_scores(x, batch.negatives)
    f_all = ad.concat_cols([f_pos, f_neg])
    per_anchor = f_pos - ad.logsumexp_rows(f_all)
    return ad.mean_all(per_anchor) + math.log(batch.k)


def estimate_vince(batch: BatchSample, witness) -> Tensor:
    """InfoNCE arithmetic on restriction-sampled negatives.

    Only the provenance of ``batch.negatives`` differs from plain InfoNCE:
    they must be drawn i.i.d. from a restricted candidate pool (see the
    samplers module). Callers are responsible for recording the restriction
    alongside the estimate; the bound is looser the tighter the pool.
    """
    return estimate_infonce(batch, witness)


def mi_estimate_from_loss(loss: float, k: int) -> float:
    """Convert an nce-family loss value to its MI-estimate scale."""
    return -loss + math.log(k)
