"""Estimator family: values, bounds, and the restricted-sampling ordering."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contrastive_mi.bank import MemoryBank
from contrastive_mi.datasets import (GaussianPairFamily, analytic_gaussian_mi,
                                     sample_gaussian_pairs)
from contrastive_mi.estimators import (BatchSample, DotWitness, EstimateError,
                                       ScaledDotWitness, estimate_ba,
                                       estimate_infonce, estimate_nwj, estimate_uba,
                                       estimate_vince, make_witness)
from contrastive_mi.samplers import NegativeSpec, sample_negatives

from conftest import unit_rows


class ProductWitness:
    """f(x, y) = scale * x . y on raw (unembedded) values; for oracles."""

    def __init__(self, scale: float):
        self.scale = scale

    def pair_scores(self, x, y):
        from contrastive_mi import autodiff as ad
        return ad.rowwise_dot(x, y) * self.scale

    def bank_scores(self, x, stack):
        from contrastive_mi import autodiff as ad
        return ad.paired_dot(x, stack) * self.scale

    def parameters(self):
        return []


class ConstantWitness:
    """f identically equal to a constant."""

    def __init__(self, value: float):
        self.value = value

    def pair_scores(self, x, y):
        from contrastive_mi.autodiff import Tensor
        return Tensor(np.full(x.shape[0], self.value))

    def bank_scores(self, x, stack):
        from contrastive_mi.autodiff import Tensor
        stack = np.asarray(stack)
        k = stack.shape[-2]
        return Tensor(np.full((x.shape[0], k), self.value))

    def parameters(self):
        return []


class TestBarberAgakov:
    def test_variational_equals_marginal_gives_zero(self, rng):
        pairs = rng.standard_normal((500, 2))

        def marginal(x):
            return -0.5 * x ** 2 - 0.5 * math.log(2 * math.pi)

        got = estimate_ba(pairs, lambda x, y: marginal(x), marginal)
        assert got == 0.0

    def test_true_conditional_recovers_gaussian_mi(self, rng):
        family = GaussianPairFamily()
        pairs = sample_gaussian_pairs(family, 400_000, rng)
        s = family.sigma
        cond_var = s[0, 0] - s[0, 1] ** 2 / s[1, 1]
        slope = s[0, 1] / s[1, 1]

        def cond_logpdf(x, y):
            return -0.5 * (x - slope * y) ** 2 / cond_var - 0.5 * np.log(2 * np.pi * cond_var)

        def marg_logpdf(x):
            return -0.5 * x ** 2 / s[0, 0] - 0.5 * np.log(2 * np.pi * s[0, 0])

        values = cond_logpdf(pairs[:, 0], pairs[:, 1]) - marg_logpdf(pairs[:, 0])
        sem = values.std() / math.sqrt(values.size)
        got = estimate_ba(pairs, cond_logpdf, marg_logpdf)
        assert got == pytest.approx(analytic_gaussian_mi(family), abs=4 * sem + 1e-4)
        assert analytic_gaussian_mi(family) == pytest.approx(0.02041, abs=1e-5)

    def test_discrete_four_point_joint_exact(self):
        # joint over {0,1}x{0,1} with probabilities in sixteenths; the oracle
        # enumerates all cells, then the estimator sees each pair with its
        # exact frequency so the Monte-Carlo mean is the exact expectation
        joint = np.array([[6, 2], [1, 7]], dtype=float) / 16.0
        px = joint.sum(axis=1)
        py = joint.sum(axis=0)
        exact_mi = sum(joint[i, j] * math.log(joint[i, j] / (px[i] * py[j]))
                       for i in range(2) for j in range(2))

        pairs = []
        for i in range(2):
            for j in range(2):
                pairs.extend([[float(i), float(j)]] * int(round(joint[i, j] * 16)))
        pairs = np.asarray(pairs)

        def cond_logpdf(x, y):
            xi = x.astype(int)
            yi = y.astype(int)
            return np.log(joint[xi, yi] / py[yi])

        def marg_logpdf(x):
            return np.log(px[x.astype(int)])

        got = estimate_ba(pairs, cond_logpdf, marg_logpdf)
        assert got == pytest.approx(exact_mi, rel=1e-12)

    def test_nonfinite_density_is_an_error(sel, rng):
        pairs = rng.standard_normal((10, 2))
        with pytest.raises(EstimateError):
            estimate_ba(pairs, lambda x, y: np.full_like(x, -np.inf), lambda x: x * 0.0)


class TestUnnormalizedBarberAgakov:
    def test_uba_lower_bounds_gaussian_mi(self, rng):
        family = GaussianPairFamily()
        pairs = sample_gaussian_pairs(family, 4000, rng)
        marginal_x = sample_gaussian_pairs(family, 4000, rng)[:, 0:1]
        witness = ProductWitness(scale=0.05)
        got = estimate_uba(pairs, witness, marginal_x)
        assert got <= analytic_gaussian_mi(family) + 0.005


class TestNWJ:
    def test_constant_one_witness_gives_zero(self, rng):
        joint = rng.standard_normal((64, 2))
        marg = rng.standard_normal((64, 2))
        got = float(estimate_nwj(joint, marg, ConstantWitness(1.0)))
        assert got == pytest.approx(0.0, abs=1e-12)

    def test_constant_zero_witness(self, rng):
        joint = rng.standard_normal((64, 2))
        marg = rng.standard_normal((64, 2))
        got = float(estimate_nwj(joint, marg, ConstantWitness(0.0)))
        assert got == pytest.approx(-1.0 / math.e, abs=1e-12)

    def test_overflow_advises_rescale(self, rng):
        joint = rng.standard_normal((8, 2)) + 40.0
        marg = rng.standard_normal((8, 2)) + 40.0
        with pytest.raises(EstimateError, match="rescale"):
            estimate_nwj(joint, marg, ProductWitness(scale=1.0))

    def test_nwj_lower_bounds_gaussian_mi(self, rng):
        family = GaussianPairFamily()
        joint = sample_gaussian_pairs(family, 20_000, rng)
        xs = sample_gaussian_pairs(family, 20_000, rng)[:, 0]
        ys = sample_gaussian_pairs(family, 20_000, rng)[:, 1]
        marg = np.stack([xs, ys], axis=1)
        got = float(estimate_nwj(joint, marg, ProductWitness(scale=0.05)))
        assert got <= analytic_gaussian_mi(family) + 0.005


class TestInfoNCE:
    def test_zero_witness_gives_zero(self, rng):
        x = unit_rows(rng, 4, 3)
        batch = BatchSample(x=x, positive=x, negatives=rng.standard_normal((4, 5, 3)))
        got = float(estimate_infonce(batch, ConstantWitness(0.0)))
        assert got == pytest.approx(0.0, abs=1e-12)

    def test_two_sample_hand_computation(self):
        # f(x, y1) = ln 3 and f(x, y2) = 0 give ln 3 - ln((3 + 1)/2) = ln 1.5
        x = np.array([[math.log(3.0)]])
        y1 = np.array([[1.0]])
        y2 = np.array([[[0.0]]])
        batch = BatchSample(x=x, positive=y1, negatives=y2)
        got = float(estimate_infonce(batch, DotWitness()))
        assert got == pytest.approx(math.log(1.5), rel=1e-12)

    def test_requires_a_negative(self, rng):
        with pytest.raises(ValueError):
            BatchSample(x=np.ones((1, 2)), positive=np.ones((1, 2)),
                        negatives=np.ones((1, 0, 2)))

    @given(st.integers(min_value=2, max_value=24), st.integers(min_value=0, max_value=2 ** 31))
    @settings(max_examples=60, deadline=None)
    def test_never_exceeds_log_k(self, k, seed):
        rng = np.random.default_rng(seed)
        x = unit_rows(rng, 3, 4)
        pos = unit_rows(rng, 3, 4)
        negs = rng.standard_normal((3, k - 1, 4))
        negs /= np.linalg.norm(negs, axis=2, keepdims=True)
        batch = BatchSample(x=x, positive=pos, negatives=negs)
        got = float(estimate_infonce(batch, ScaledDotWitness(0.07)))
        assert got <= math.log(k) + 1e-9


class TestVince:
    def test_full_support_equals_infonce(self, rng):
        x = unit_rows(rng, 6, 5)
        pos = unit_rows(rng, 6, 5)
        negs = rng.standard_normal((6, 9, 5))
        batch = BatchSample(x=x, positive=pos, negatives=negs)
        w = ScaledDotWitness(0.07)
        assert float(estimate_vince(batch, w)) == float(estimate_infonce(batch, w))

    def test_six_point_enumeration_restriction_shrinks_estimate(self):
        """Exhaustive enumeration over all negative-pair draws.

        Support of six scalar witness values; the restricted distribution
        conditions on the top half. Because the restriction keeps exactly
        the largest exp-scores, the averaged denominator grows and the
        log-ratio estimate strictly shrinks, for every draw distribution.
        """
        f_vals = np.array([-1.0, -0.4, 0.1, 0.6, 1.3, 2.0])
        f_pos = 0.8
        k = 3  # positive plus two negatives
        p = np.full(6, 1.0 / 6.0)
        tau = 1.0
        assert tau > math.log(np.mean(np.exp(f_vals)))  # threshold premise
        members = f_vals >= tau
        q = np.where(members, p, 0.0)
        q /= q.sum()

        def mean_estimate(weights):
            total = 0.0
            for a in range(6):
                for b in range(6):
                    w = weights[a] * weights[b]
                    if w == 0.0:
                        continue
                    denom = (math.exp(f_pos) + math.exp(f_vals[a]) + math.exp(f_vals[b])) / k
                    total += w * (f_pos - math.log(denom))
            return total

        assert mean_estimate(q) < mean_estimate(p)

    def test_ordering_with_frozen_witness_across_restrictions(self, rng):
        """Restricted draws never beat marginal draws on average.

        Anchors and positives are correlated so the closest-percent pools
        actually contain hard negatives; the witness stays fixed.
        """
        n = 400
        d = 6
        population = unit_rows(rng, n, d)
        bank = MemoryBank(population, alpha=0.0, renormalize=True)
        witness = ScaledDotWitness(0.07)
        draws = 300
        k = 17

        def mean_se(spec: NegativeSpec):
            values = np.empty(draws)
            for t in range(draws):
                anchor_index = int(rng.integers(0, n))
                y1 = population[anchor_index]
                x = y1 + 0.5 * rng.standard_normal(d)
                x /= np.linalg.norm(x)
                neg_idx = sample_negatives(spec, bank, y1, anchor_index, k - 1, rng)
                batch = BatchSample(x=x[None, :], positive=y1[None, :],
                                    negatives=population[neg_idx][None, :, :])
                values[t] = float(estimate_infonce(batch, witness))
            return values.mean(), values.std() / math.sqrt(draws)

        base_mean, base_se = mean_se(NegativeSpec(kind="marginal"))
        for pct in (90.0, 75.0, 50.0, 25.0, 10.0, 5.0):
            mean, se = mean_se(NegativeSpec(kind="ball", outer_percent=pct))
            slack = 3.0 * math.sqrt(base_se ** 2 + se ** 2)
            assert mean <= base_mean + slack, f"restriction {pct}% broke the ordering"


class TestRestrictedMeanTheorem:
    """Exhaustively enumerated strict inequality on discrete distributions.

    Conditioning a finite distribution on the set where exp-scores exceed a
    threshold above their mean strictly increases the expected exp-score.
    """

    @pytest.mark.parametrize("trial", range(20))
    def test_eight_point_strict_inequality(self, trial):
        rng = np.random.default_rng(1000 + trial)
        probs = rng.dirichlet(np.ones(8))
        f = rng.normal(0.0, 1.5, size=8)
        g = np.exp(f)
        mean_p = float(np.sum(probs * g))
        tau = math.log(mean_p) + 0.1
        members = f >= tau
        if not members.any():
            tau = math.log(mean_p) + 1e-9
            members = f > tau
        if not members.any():
            pytest.skip("no support above the threshold for this draw")
        mass = probs[members].sum()
        mean_q = float(np.sum(probs[members] * g[members]) / mass)
        assert mean_p < mean_q

    def test_witness_ablation_kinds_are_constructible(self, rng):
        for kind in ("dot", "scaled-dot", "bilinear", "concat-linear", "concat-mlp"):
            w = make_witness(kind, 4, rng, omega=0.07)
            x = unit_rows(rng, 3, 4)
            y = unit_rows(rng, 3, 4)
            scores = w.pair_scores
            from contrastive_mi.autodiff import Tensor
            out = scores(Tensor(x), Tensor(y))
            assert out.shape == (3,)
        with pytest.raises(ValueError):
            make_witness("nope", 4, rng)
