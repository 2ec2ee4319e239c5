"""The contrastive loss catalog, built on one shared score layer.

Every objective scores an encoded view of the anchor against stored bank
rows and reduces the scores with logsumexp. Three families:

  plain log-ratio     loss = LSE(denominator) - LSE(close set)
                      Covers instance discrimination and its restricted-
                      negative variants (ball, ring, cave) plus neighbor
                      extensions; MI estimate is -loss + log K.
  normalized ratio    both logsumexps shifted by their log counts; the
                      scale of the aggregation-style objective, whose
                      value is directly an (negated) MI estimate.
  legacy softmax      literal exp/sum arithmetic with a hardcoded kappa.
                      Kept only for the stability comparison; this path
                      is allowed to overflow and raises
                      ``NumericalOverflowError`` when it does.

Loss evaluation is pure given (parameters, bank snapshot, rng); the rng
is consumed in the fixed order view draw, negative draws, neighbor draws.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError, NonFiniteError, Tensor
from .bank import MemoryBank
from .samplers import (NegativeSpec, NeighborSpec, sample_close_neighbors,
                       sample_negatives)
from .views import ViewFunction, apply_view

# Hardcoded softmax constant from the original instance-discrimination
# implementation (partition estimate over dataset size).
KAPPA_DEFAULT = 2876934.2 / 1281167


class NumericalOverflowError(RuntimeError):
    """The legacy exp/sum path produced a non-finite intermediate."""


# -- score-level cores ------------------------------------------------------------


def scores_against_rows(witness, x_emb: Tensor, rows: np.ndarray) -> Tensor:
    """Witness scores of each anchor embedding against its stack of rows."""
    return witness.bank_scores(x_emb, rows)


def nce_loss_from_scores(f_close: Tensor, f_denom: Tensor) -> Tensor:
    """Plain two-logsumexp loss: mean_b [LSE(f_denom) - LSE(f_close)].

    ``f_close`` is [B, L] (L = 1 when the close set is just the anchor) and
    ``f_denom`` is [B, K] with the anchor's own score in column 0. Shifting
    all scores by a constant leaves the value unchanged.
    """
    close = f_close if f_close.data.ndim == 2 else ad.reshape(f_close, (f_close.shape[0], 1))
    return ad.mean_all(ad.logsumexp_rows(f_denom) - ad.logsumexp_rows(close))


def normalized_nce_loss_from_scores(f_close: Tensor, f_denom: Tensor) -> Tensor:
    """Count-normalized variant: logsumexps replaced by log-mean-exps.

    The negated value is directly on the MI-estimate scale; it differs
    from the plain loss by log K - log L.
    """
    close = f_close if f_close.data.ndim == 2 else ad.reshape(f_close, (f_close.shape[0], 1))
    k = f_denom.shape[1]
    l = close.shape[1]
    return nce_loss_from_scores(close, f_denom) - (math.log(k) - math.log(l))


def ir_softmax_loss_from_scores(f_pos: Tensor, f_denom: Tensor, kappa: float) -> Tensor:
    """Legacy sampled-softmax loss: -log( e^{f_pos} / (kappa * mean_j e^{f_j}) ).

    Computed with literal exponentials, the way the pre-logsumexp
    implementations did; large scores overflow and raise
    ``NumericalOverflowError`` instead of returning a value.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    k = f_denom.shape[1]
    try:
        partition = ad.log(ad.sum_rows(ad.exp(f_denom)))
    except NonFiniteError as err:
        raise NumericalOverflowError(
            "exp overflow in the legacy softmax partition; use the logsumexp "
            "formulation instead") from err
    except DomainError as err:
        raise NumericalOverflowError(
            "exp underflow emptied the legacy softmax partition") from err
    per_anchor = partition - f_pos
    return ad.mean_all(per_anchor) + (math.log(kappa) - math.log(k))


def la_ratio_loss_from_scores(f_close: Tensor, f_denom: Tensor, kappa: float) -> Tensor:
    """Legacy aggregation ratio: -log( p(close) / p(background) ).

    Both set masses share one sampled-softmax partition scaled by kappa, so
    kappa cancels exactly; the value reduces to the difference of two plain
    log-sums. Computed with literal exponentials like the original code.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    close = f_close if f_close.data.ndim == 2 else ad.reshape(f_close, (f_close.shape[0], 1))
    try:
        log_partition = ad.log(ad.sum_rows(ad.exp(f_denom)) * kappa)
        log_p_close = ad.log(ad.sum_rows(ad.exp(close))) - log_partition
        log_p_back = ad.log(ad.sum_rows(ad.exp(f_denom))) - log_partition
    except NonFiniteError as err:
        raise NumericalOverflowError("exp overflow in the aggregation ratio") from err
    except DomainError as err:
        raise NumericalOverflowError("exp underflow in the aggregation ratio") from err
    return ad.mean_all(log_p_back - log_p_close)


# -- embedding-level objectives -----------------------------------------------------


def _anchor_and_negative_scores(witness, x_emb: Tensor, bank: MemoryBank,
                                anchor_index: int, neg_indices: np.ndarray):
    anchor_rows = bank.entries[[anchor_index]][None, :, :]
    f_anchor = witness.bank_scores(x_emb, anchor_rows)
    f_neg = witness.bank_scores(x_emb, bank.entries[neg_indices][None, :, :])
    return f_anchor, ad.concat_cols([f_anchor, f_neg])


def loss_t_disc(datum: np.ndarray, anchor_index: int, view_fn: ViewFunction, encoder,
                bank: MemoryBank, neg_spec: NegativeSpec, neigh_spec: NeighborSpec,
                witness, k: int, l: int, rng: np.random.Generator,
                clusters: np.ndarray | None = None, epoch: float = 0.0) -> Tensor:
    """Restricted-negative discrimination loss for one anchor.

    Draws a view of the datum, embeds it, samples K-1 negatives per the
    negative spec and L-1 close neighbors per the neighbor spec, and returns
    LSE over {anchor union negatives} minus LSE over the close set. With
    marginal negatives and no neighbors this is plain instance
    discrimination; ball/ring/cave restrictions only change the pool the
    negatives come from.
    """
    if k < 2:
        raise ValueError("discrimination needs K >= 2 (at least one negative)")
    view = apply_view(view_fn, datum, rng)
    x_emb = encoder.forward(view)
    anchor_ref = x_emb.data[0]
    neg_idx = sample_negatives(neg_spec, bank, anchor_ref, anchor_index, k - 1, rng,
                               clusters=clusters, epoch=epoch)
    close_idx = sample_close_neighbors(neigh_spec, bank, anchor_ref, anchor_index,
                                       l - 1, rng, clusters=clusters, epoch=epoch)
    f_anchor, f_denom = _anchor_and_negative_scores(witness, x_emb, bank, anchor_index, neg_idx)
    if close_idx.size == 1:
        f_close = f_anchor
    else:
        f_rest = witness.bank_scores(x_emb, bank.entries[close_idx[1:]][None, :, :])
        f_close = ad.concat_cols([f_anchor, f_rest])
    return nce_loss_from_scores(f_close, f_denom)


def loss_ir_nce(datum, anchor_index, view_fn, encoder, bank, witness, k, rng) -> Tensor:
    """Instance discrimination in logsumexp form.

    Identical by definition to the restricted loss with marginal negatives
    and no neighbor set.
    """
    return loss_t_disc(datum, anchor_index, view_fn, encoder, bank,
                       NegativeSpec(kind="marginal"), NeighborSpec(kind="none"),
                       witness, k, 1, rng)


def loss_ir_softmax(datum, anchor_index, view_fn, encoder, bank, witness, k, rng,
                    kappa: float = KAPPA_DEFAULT) -> Tensor:
    """Legacy instance discrimination with the hardcoded softmax constant."""
    if k < 2:
        raise ValueError("discrimination needs K >= 2 (at least one negative)")
    view = apply_view(view_fn, datum, rng)
    x_emb = encoder.forward(view)
    neg_idx = sample_negatives(NegativeSpec(kind="marginal"), bank, x_emb.data[0],
                               anchor_index, k - 1, rng)
    f_anchor, f_denom = _anchor_and_negative_scores(witness, x_emb, bank, anchor_index, neg_idx)
    return ir_softmax_loss_from_scores(ad.reshape(f_anchor, (1,)), f_denom, kappa)


def loss_la_original(datum, anchor_index, view_fn, encoder, bank, witness,
                     b_indices: np.ndarray, c_indices: np.ndarray, rng,
                     kappa: float = KAPPA_DEFAULT,
                     enforce_anchor_in_close: bool = True) -> Tensor:
    """Legacy aggregation loss over explicit background and close index sets.

    ``c_indices`` must be a subset of ``b_indices`` (as sets); with the
    close set equal to just the anchor this reduces exactly to ball
    discrimination on the same background draw. kappa scales the shared
    partition and cancels from the ratio.
    """
    b_indices = np.asarray(b_indices, dtype=np.intp)
    c_indices = np.asarray(c_indices, dtype=np.intp)
    if b_indices.size == 0:
        raise ValueError("background set is empty")
    if not set(c_indices.tolist()) <= set(b_indices.tolist()):
        raise ValueError("close set must be a subset of the background set")
    if enforce_anchor_in_close and anchor_index not in c_indices:
        c_indices = np.concatenate([[anchor_index], c_indices]).astype(np.intp)
    view = apply_view(view_fn, datum, rng)
    x_emb = encoder.forward(view)
    f_b = witness.bank_scores(x_emb, bank.entries[b_indices][None, :, :])
    f_c = witness.bank_scores(x_emb, bank.entries[c_indices][None, :, :])
    return la_ratio_loss_from_scores(f_c, f_b, kappa)


def loss_la_nce(datum, anchor_index, view_fn, encoder, bank, witness, k, l, rng,
                neg_spec: NegativeSpec | None = None,
                neigh_spec: NeighborSpec | None = None,
                clusters: np.ndarray | None = None, epoch: float = 0.0) -> Tensor:
    """Aggregation simplified to the difference of two log-mean-exps.

    Same sampling structure as the restricted loss with ball negatives and
    cluster neighbors, reported on the count-normalized estimator scale:
    it equals the legacy ratio on the same draws minus (log K - log L).
    """
    if neg_spec is None:
        neg_spec = NegativeSpec(kind="ball", outer_percent=10.0)
    if neigh_spec is None:
        neigh_spec = NeighborSpec(kind="k-neigh")
    if k < 2:
        raise ValueError("discrimination needs K >= 2 (at least one negative)")
    view = apply_view(view_fn, datum, rng)
    x_emb = encoder.forward(view)
    anchor_ref = x_emb.data[0]
    neg_idx = sample_negatives(neg_spec, bank, anchor_ref, anchor_index, k - 1, rng,
                               clusters=clusters, epoch=epoch)
    close_idx = sample_close_neighbors(neigh_spec, bank, anchor_ref, anchor_index,
                                       l - 1, rng, clusters=clusters, epoch=epoch)
    f_anchor, f_denom = _anchor_and_negative_scores(witness, x_emb, bank, anchor_index, neg_idx)
    if close_idx.size == 1:
        f_close = f_anchor
    else:
        f_rest = witness.bank_scores(x_emb, bank.entries[close_idx[1:]][None, :, :])
        f_close = ad.concat_cols([f_anchor, f_rest])
    return normalized_nce_loss_from_scores(f_close, f_denom)


def loss_view_extended(datum, anchor_index, view_fn, encoder, bank, witness, k, l, rng,
                       neg_spec: NegativeSpec | None = None,
                       neigh_spec: NeighborSpec | None = None,
                       clusters: np.ndarray | None = None, epoch: float = 0.0) -> Tensor:
    """Neighbor objective with the sum outside the log.

    Averages per-neighbor normalized log ratios instead of pooling the
    close set inside one logsumexp. By Jensen's inequality the pooled
    (aggregation) loss never exceeds this one on the same draws.
    """
    if neg_spec is None:
        neg_spec = NegativeSpec(kind="ball", outer_percent=10.0)
    if neigh_spec is None:
        neigh_spec = NeighborSpec(kind="k-neigh")
    view = apply_view(view_fn, datum, rng)
    x_emb = encoder.forward(view)
    anchor_ref = x_emb.data[0]
    neg_idx = sample_negatives(neg_spec, bank, anchor_ref, anchor_index, k - 1, rng,
                               clusters=clusters, epoch=epoch)
    close_idx = sample_close_neighbors(neigh_spec, bank, anchor_ref, anchor_index,
                                       l - 1, rng, clusters=clusters, epoch=epoch)
    _, f_denom = _anchor_and_negative_scores(witness, x_emb, bank, anchor_index, neg_idx)
    f_close_rows = witness.bank_scores(x_emb, bank.entries[close_idx][None, :, :])
    k_count = f_denom.shape[1]
    denom_term = ad.logsumexp_rows(f_denom) - math.log(k_count)
    per_neighbor = ad.reshape(f_close_rows, (close_idx.size,))
    return ad.mean_all(denom_term) - ad.mean_all(per_neighbor)


def loss_simclr(minibatch: np.ndarray, view_fn: ViewFunction, encoder, witness,
                rng: np.random.Generator, anchor_pos: int = 0) -> Tensor:
    """Two fresh views of the anchor, in-batch views as negatives, no bank.

    The batch plays the role of a bank refreshed every step: the positive
    is a second view of the anchor and the denominator runs over the
    positive plus one view of every other batch element.
    """
    minibatch = np.atleast_2d(np.asarray(minibatch, dtype=np.float64))
    k = minibatch.shape[0]
    if k < 2:
        raise ValueError("simclr needs a minibatch of at least two elements")
    anchor_view = apply_view(view_fn, minibatch[anchor_pos], rng)
    positive_view = apply_view(view_fn, minibatch[anchor_pos], rng)
    others = np.delete(np.arange(k), anchor_pos)
    other_views = apply_view(view_fn, minibatch[others], rng)
    x_emb = encoder.forward(anchor_view)
    pos_emb = encoder.forward(positive_view)
    other_embs = encoder.forward(other_views)
    f_pos = witness.pair_scores(x_emb, pos_emb)
    f_others = witness.bank_scores(x_emb, other_embs.data[None, :, :])
    f_denom = ad.concat_cols([f_pos, f_others])
    return nce_loss_from_scores(f_pos, f_denom)


def loss_cmc(datum: np.ndarray, anchor_index: int, split: tuple, encoder_a, encoder_b,
             bank_a: MemoryBank, bank_b: MemoryBank, witness, k: int,
             rng: np.random.Generator) -> Tensor:
    """Two-channel coding: sum of two discrimination losses with swapped banks.

    ``split`` is a pair of coordinate index tuples bipartitioning the data
    dimensions. Channel A of the anchor is scored against bank B (which
    stores channel-B embeddings) and vice versa; negatives are marginal.
    """
    group_a, group_b = split
    if len(group_a) == 0 or len(group_b) == 0:
        raise ValueError("both channel groups must be non-empty")
    datum = np.atleast_2d(np.asarray(datum, dtype=np.float64))
    marginal = NegativeSpec(kind="marginal")
    none = NeighborSpec(kind="none")
    view_a = ViewFunction(kind="coordinate-channel", selector=tuple(group_a))
    view_b = ViewFunction(kind="coordinate-channel", selector=tuple(group_b))
    term_ab = loss_t_disc(datum, anchor_index, view_a, encoder_a, bank_b,
                          marginal, none, witness, k, 1, rng)
    term_ba = loss_t_disc(datum, anchor_index, view_b, encoder_b, bank_a,
                          marginal, none, witness, k, 1, rng)
    return term_ab + term_ba


def cmc_mi_estimate(loss_value: float, k: int) -> float:
    """Two-channel losses sum two bounds; halve before adding log K."""
    return -loss_value / 2.0 + math.log(k)


def check_permutation_invariance(embeddings: np.ndarray, omega: float,
                                 permutation: np.ndarray) -> tuple[float, float]:
    """Full-denominator instance-discrimination totals before and after
    permuting the embedding vectors.

    With an identity view function and the complete dataset in the
    denominator, the total loss depends only on the multiset of embeddings,
    so the two returned values agree to rounding noise. A view function
    that lets two data share a view breaks the premise.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    permutation = np.asarray(permutation, dtype=np.intp)

    def total(e: np.ndarray) -> float:
        f = (e @ e.T) / omega
        m = f.max(axis=1, keepdims=True)
        lse = (m + np.log(np.sum(np.exp(f - m), axis=1, keepdims=True))).ravel()
        return float(np.sum(lse - np.diag(f)))

    return total(embeddings), total(embeddings[permutation])
