"""Tensor math, logsumexp, backward pass, and optimizer updates."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contrastive_mi import autodiff as ad
from contrastive_mi.autodiff import DomainError, GraphStateError, NonFiniteError, Tensor
from contrastive_mi.nets import Linear, MLPEncoder
from contrastive_mi.optim import Adam, SGD

from conftest import central_difference_grads, max_relative_error


class TestLogsumexp:
    def test_single_zero(self):
        assert ad.logsumexp_array(np.array([0.0])) == 0.0

    def test_factors_out_max(self):
        # two equal huge values: max + log 2, no overflow on the shifted path
        got = ad.logsumexp_array(np.array([1000.0, 1000.0]))
        assert got == pytest.approx(1000.0 + math.log(2.0), abs=1e-9)

    def test_exp_sum_by_hand(self):
        # exp(0) + exp(ln 3) = 4
        got = ad.logsumexp_array(np.array([0.0, math.log(3.0)]))
        assert got == pytest.approx(math.log(4.0), rel=1e-12)

    def test_empty_is_domain_error(self):
        with pytest.raises(DomainError):
            ad.logsumexp_array(np.array([]))

    def test_matches_naive_formula_when_safe(self):
        rng = np.random.default_rng(3)
        v = rng.normal(0, 5, size=64)
        naive = math.log(np.sum(np.exp(v)))
        assert ad.logsumexp_array(v) == pytest.approx(naive, rel=1e-14)

    def test_never_overflows_on_representable_inputs(self):
        v = np.array([708.0, 709.0, 710.0, 700.0])
        got = ad.logsumexp_array(v)
        assert np.isfinite(got)

    @given(st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=1, max_size=60))
    @settings(max_examples=120, deadline=None)
    def test_bounds(self, values):
        v = np.asarray(values)
        lse = ad.logsumexp_array(v)
        assert lse >= v.max() - 1e-12
        assert lse <= v.max() + math.log(len(values)) + 1e-12

    def test_tensor_gradient_is_softmax(self):
        x = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
        out = ad.logsumexp(x)
        out.backward()
        soft = np.exp(x.data - out.item())
        np.testing.assert_allclose(x.grad, soft, atol=1e-12)


class TestForward:
    def test_identity_network(self):
        enc = MLPEncoder(3, 3, 3, 1, np.random.default_rng(0), l2_normalize=False)
        enc.layers[0].w.data[:] = np.eye(3)
        enc.layers[0].b.data[:] = 0.0
        x = np.array([[1.0, -2.0, 0.5]])
        np.testing.assert_allclose(enc.forward(x).data, x)

    def test_single_affine_layer(self):
        enc = MLPEncoder(1, 1, 1, 1, np.random.default_rng(0), l2_normalize=False)
        enc.layers[0].w.data[:] = [[2.0]]
        enc.layers[0].b.data[:] = [1.0]
        assert enc.forward(np.array([[3.0]])).data[0, 0] == pytest.approx(7.0)

    def test_two_layer_relu_by_hand(self):
        enc = MLPEncoder(2, 2, 1, 2, np.random.default_rng(0), l2_normalize=False)
        enc.layers[0].w.data[:] = [[1.0, -1.0], [0.5, 2.0]]
        enc.layers[0].b.data[:] = [0.0, -1.0]
        enc.layers[1].w.data[:] = [[3.0], [1.0]]
        enc.layers[1].b.data[:] = [0.25]
        x = np.array([[2.0, 1.0]])
        # layer 1: [2*1+1*0.5, 2*(-1)+1*2-1] = [2.5, -1.0]; relu -> [2.5, 0]
        # layer 2: 2.5*3 + 0*1 + 0.25 = 7.75
        assert enc.forward(x).data[0, 0] == pytest.approx(7.75)

    def test_shape_mismatch_raises(self):
        enc = MLPEncoder(3, 4, 2, 2, np.random.default_rng(0))
        with pytest.raises(DomainError):
            enc.forward(np.ones((2, 5)))

    def test_nonfinite_input_rejected(self):
        with pytest.raises(NonFiniteError):
            Tensor(np.array([1.0, np.inf]))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        ad.sum_all(x).backward()
        np.testing.assert_allclose(x.grad, np.ones((2, 3)))

    def test_half_square_norm_gradient_is_x(self):
        x = Tensor(np.array([[1.0, -2.0, 3.0]]), requires_grad=True)
        loss = ad.sum_all(ad.mul(x, x)) * 0.5
        loss.backward()
        np.testing.assert_allclose(x.grad, x.data)

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(GraphStateError):
            (x * 2.0).backward()

    def test_backward_without_parameters(self):
        x = Tensor(np.ones(3))
        with pytest.raises(GraphStateError):
            ad.sum_all(x).backward()

    def test_gradient_accumulates_on_reuse(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        # y = x * x built by reusing the same node twice
        loss = ad.sum_all(ad.mul(x, x))
        loss.backward()
        np.testing.assert_allclose(x.grad, [4.0])

    def test_infonce_style_loss_matches_finite_differences(self, rng):
        enc = MLPEncoder(3, 6, 4, 2, rng)
        x = rng.standard_normal((8, 3))
        stack = rng.standard_normal((8, 7, 4))
        params = enc.parameters()

        def loss_fn():
            emb = enc.forward(x)
            f = ad.paired_dot(emb, stack) / 0.07
            pos = ad.take_per_row(f, np.zeros((8, 1), dtype=int))
            return ad.mean_all(ad.logsumexp_rows(f) - ad.reshape(pos, (8,))).item()

        emb = enc.forward(x)
        f = ad.paired_dot(emb, stack) / 0.07
        pos = ad.take_per_row(f, np.zeros((8, 1), dtype=int))
        loss = ad.mean_all(ad.logsumexp_rows(f) - ad.reshape(pos, (8,)))
        loss.backward()
        analytic = [p.grad for p in params]
        numeric = central_difference_grads(loss_fn, params)
        assert max_relative_error(analytic, numeric) <= 1e-4

    @pytest.mark.parametrize("op_name", ["l2norm", "tile_pairs", "take_per_row",
                                         "gather_rows", "pair_concat", "concat"])
    def test_individual_op_gradients(self, op_name, rng):
        a = Tensor(rng.standard_normal((4, 3)), requires_grad=True)
        b = Tensor(rng.standard_normal((5, 3)), requires_grad=True)
        stack = rng.standard_normal((4, 6, 3))
        idx2 = rng.integers(0, 3, size=(4, 2))
        idx1 = rng.integers(0, 3, size=4)

        def build():
            if op_name == "l2norm":
                return ad.sum_all(ad.mul(ad.l2_normalize_rows(a), ad.l2_normalize_rows(a)) * 0.5
                                  + ad.l2_normalize_rows(a))
            if op_name == "tile_pairs":
                return ad.sum_all(ad.exp(ad.tile_pairs(a, b) * 0.1))
            if op_name == "take_per_row":
                return ad.sum_all(ad.exp(ad.take_per_row(a, idx2)))
            if op_name == "gather_rows":
                return ad.sum_all(ad.exp(ad.gather_rows(a, idx1)))
            if op_name == "pair_concat":
                return ad.sum_all(ad.exp(ad.pair_concat(a, stack) * 0.1))
            return ad.sum_all(ad.exp(ad.concat_cols([ad.rowwise_dot(a, a), a]) * 0.3))

        loss = build()
        loss.backward()
        params = [a, b] if op_name == "tile_pairs" else [a]
        analytic = [p.grad for p in params]
        numeric = central_difference_grads(lambda: build().item(), params)
        assert max_relative_error(analytic, numeric) <= 1e-4


class TestOptimizers:
    def test_plain_sgd_subtracts_gradient(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = SGD([p], lr=1.0, momentum=0.0, weight_decay=0.0)
        p.grad = np.array([0.5, -0.25])
        opt.step()
        np.testing.assert_allclose(p.data, [0.5, 2.25])

    def test_momentum_two_identical_steps(self):
        # v1 = g, v2 = 0.9 g + g = 1.9 g, so the second update is 1.9 * lr * g
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = SGD([p], lr=0.1, momentum=0.9)
        g = np.array([2.0])
        p.grad = g.copy()
        opt.step()
        first = -p.data.copy()
        p.grad = g.copy()
        opt.step()
        second = -(p.data.copy() + first)
        np.testing.assert_allclose(first, 0.1 * g)
        np.testing.assert_allclose(second, 1.9 * 0.1 * g)

    def test_adam_first_step_by_hand(self):
        p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        opt = Adam([p], lr=0.03, betas=(0.9, 0.999), eps=1e-8)
        g = np.array([0.4, -0.2])
        p.grad = g.copy()
        opt.step()
        # bias-corrected m-hat = g, v-hat = g^2; update = lr * g / (|g| + eps)
        expected = np.array([1.0, -1.0]) - 0.03 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(p.data, expected, rtol=1e-12)

    def test_weight_decay_enters_the_gradient(self):
        p = Tensor(np.array([10.0]), requires_grad=True)
        opt = SGD([p], lr=1.0, momentum=0.0, weight_decay=0.1)
        p.grad = np.array([0.0])
        opt.step()
        np.testing.assert_allclose(p.data, [9.0])

    def test_moment_buffers_match_parameter_shapes(self, rng):
        enc = MLPEncoder(3, 6, 4, 3, rng)
        opt = Adam(enc.parameters(), lr=0.01)
        for p, m, v in zip(opt.params, opt.m, opt.v):
            assert m.shape == p.data.shape
            assert v.shape == p.data.shape


class TestDeterminism:
    def test_identical_seed_gives_bit_identical_trajectories(self):
        def train_once():
            rng = np.random.default_rng(7)
            enc = MLPEncoder(2, 5, 3, 2, rng)
            opt = SGD(enc.parameters(), lr=0.05, momentum=0.9, weight_decay=1e-5)
            x = rng.standard_normal((16, 2))
            stack = rng.standard_normal((16, 9, 3))
            for _ in range(5):
                emb = enc.forward(x)
                f = ad.paired_dot(emb, stack)
                loss = ad.mean_all(ad.logsumexp_rows(f))
                opt.zero_grad()
                loss.backward()
                opt.step()
            return [p.data.copy() for p in enc.parameters()]

        first = train_once()
        second = train_once()
        for a, b in zip(first, second):
            assert np.array_equal(a, b)
