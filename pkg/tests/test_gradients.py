"""Finite-difference checks for every differentiable op (64-bit, eps 1e-5)."""

import numpy as np
import pytest

from bgfg.autodiff import (
    ConvSpec,
    Tensor,
    apply_activation,
    batchnorm2d,
    bilinear_resize,
    concat_channels,
    conv2d,
    leaky_relu,
    masked_nll_mean,
    relu,
    softmax_channels,
    squared_error_sum,
    tanh,
    transposed_conv2d,
)
from conftest import check_gradients, relative_error


def away_from_zero(rng, shape, margin=0.1):
    """Samples with |x| >= margin so kinked activations see no crossings."""
    x = rng.normal(size=shape)
    return x + np.sign(x) * margin


class TestElementwiseGrads:
    def test_relu(self, rng):
        x = away_from_zero(rng, (2, 3, 4, 4))
        check_gradients(lambda t: relu(t).sum(), [x])

    def test_leaky_relu(self, rng):
        x = away_from_zero(rng, (2, 3, 5, 5))
        check_gradients(lambda t: leaky_relu(t, 0.2).sum(), [x])

    def test_tanh(self, rng):
        x = rng.normal(size=(3, 4))
        check_gradients(lambda t: tanh(t).sum(), [x])

    def test_apply_activation_matches_direct(self, rng):
        x = away_from_zero(rng, (1, 2, 3, 3))
        for kind in ("relu", "leaky_relu", "tanh", "identity"):
            check_gradients(lambda t: apply_activation(t, kind).sum(), [x])

    def test_add_mul_div_neg(self, rng):
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(4, 3))
        check_gradients(lambda ta, tb: ((ta + tb) * 0.7).sum(), [a, b])
        check_gradients(lambda ta: (-ta / 3.0).sum(), [a])
        check_gradients(lambda ta, tb: (ta - tb).sum(), [a, b])

    def test_reuse_accumulates(self, rng):
        a = rng.normal(size=(3, 3))
        check_gradients(lambda t: (t + t).sum(), [a])


class TestConvGrads:
    def test_plain_conv_all_inputs(self, rng):
        spec = ConvSpec(2, 3, 3, 3, padding=1)
        x = rng.normal(size=(2, 2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=(3,))
        check_gradients(
            lambda tx, tw, tb: conv2d(tx, spec, tw, bias=tb).sum(), [x, w, b]
        )

    def test_strided_dilated_with_remainder(self, rng):
        # input extent 8 with k3 s2 p1 leaves one uncovered row/column
        spec = ConvSpec(2, 2, 3, 3, stride=2, dilation=1, padding=1, has_bias=False)
        x = rng.normal(size=(1, 2, 8, 8))
        w = rng.normal(size=(2, 2, 3, 3))
        check_gradients(lambda tx, tw: conv2d(tx, spec, tw).sum(), [x, w])

    def test_dilated_conv(self, rng):
        spec = ConvSpec(2, 2, 3, 2, stride=1, dilation=2, padding=2, has_bias=False)
        x = rng.normal(size=(2, 2, 7, 6))
        w = rng.normal(size=(2, 2, 3, 2))
        check_gradients(lambda tx, tw: conv2d(tx, spec, tw).sum(), [x, w])

    def test_rectangular_kernel_and_input(self, rng):
        spec = ConvSpec(3, 2, 2, 4, stride=2, padding=1, has_bias=False)
        x = rng.normal(size=(2, 3, 6, 8))
        w = rng.normal(size=(2, 3, 2, 4))
        check_gradients(lambda tx, tw: conv2d(tx, spec, tw).sum(), [x, w])

    def test_weighted_output_not_just_sum(self, rng):
        # a non-uniform functional exercises position-dependent gradients
        spec = ConvSpec(2, 2, 3, 3, padding=1, has_bias=False)
        x = rng.normal(size=(1, 2, 5, 5))
        w = rng.normal(size=(2, 2, 3, 3))
        target = rng.normal(size=(1, 2, 5, 5))

        def loss(tx, tw):
            return squared_error_sum(conv2d(tx, spec, tw), Tensor(target))

        check_gradients(loss, [x, w])


class TestTransposedConvGrads:
    def test_plain_tconv_all_inputs(self, rng):
        spec = ConvSpec(3, 2, 3, 3, padding=1)
        x = rng.normal(size=(2, 3, 4, 4))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=(2,))
        check_gradients(
            lambda tx, tw, tb: transposed_conv2d(tx, spec, tw, bias=tb).sum(), [x, w, b]
        )

    def test_strided_upsampler(self, rng):
        spec = ConvSpec(4, 2, 4, 4, stride=2, padding=1, has_bias=False)
        x = rng.normal(size=(1, 4, 4, 4))
        w = rng.normal(size=(4, 2, 4, 4))
        check_gradients(lambda tx, tw: transposed_conv2d(tx, spec, tw).sum(), [x, w])

    def test_dilated_tconv(self, rng):
        spec = ConvSpec(2, 2, 3, 3, stride=2, dilation=2, padding=2, has_bias=False)
        x = rng.normal(size=(1, 2, 4, 5))
        w = rng.normal(size=(2, 2, 3, 3))
        check_gradients(lambda tx, tw: transposed_conv2d(tx, spec, tw).sum(), [x, w])

    def test_weighted_output(self, rng):
        spec = ConvSpec(2, 3, 4, 4, stride=2, padding=1, has_bias=False)
        x = rng.normal(size=(1, 2, 3, 3))
        w = rng.normal(size=(2, 3, 4, 4))
        target = rng.normal(size=(1, 3, 6, 6))

        def loss(tx, tw):
            return squared_error_sum(transposed_conv2d(tx, spec, tw), Tensor(target))

        check_gradients(loss, [x, w])


class TestNormalizationAndShapeGrads:
    def test_softmax_channels(self, rng):
        x = rng.normal(size=(2, 3, 3, 3))
        target = np.abs(rng.normal(size=(2, 3, 3, 3)))

        def loss(t):
            return squared_error_sum(softmax_channels(t), Tensor(target))

        check_gradients(loss, [x])

    def test_batchnorm_all_inputs(self, rng):
        x = rng.normal(size=(3, 2, 4, 4)) * 2 + 1
        gamma = rng.normal(size=(2,)) + 2.0
        beta = rng.normal(size=(2,))
        target = rng.normal(size=(3, 2, 4, 4))

        def loss(tx, tg, tb):
            return squared_error_sum(batchnorm2d(tx, tg, tb), Tensor(target))

        check_gradients(loss, [x, gamma, beta], tol=5e-4)

    def test_bilinear_resize_up_and_down(self, rng):
        x = rng.normal(size=(1, 2, 6, 6))
        for target_size in (11, 4):
            target = rng.normal(size=(1, 2, target_size, target_size))

            def loss(t):
                return squared_error_sum(bilinear_resize(t, target_size, target_size), Tensor(target))

            check_gradients(loss, [x])

    def test_concat_channels(self, rng):
        a = rng.normal(size=(2, 2, 3, 3))
        b = rng.normal(size=(2, 3, 3, 3))
        target = rng.normal(size=(2, 5, 3, 3))

        def loss(ta, tb):
            return squared_error_sum(concat_channels(ta, tb), Tensor(target))

        check_gradients(loss, [a, b])


class TestLossGrads:
    def test_squared_error_both_sides(self, rng):
        a = rng.normal(size=(2, 3, 4, 4))
        b = rng.normal(size=(2, 3, 4, 4))
        check_gradients(lambda ta, tb: squared_error_sum(ta, tb), [a, b])

    def test_squared_error_gradient_formula(self, rng):
        a = rng.normal(size=(5, 5))
        b = rng.normal(size=(5, 5))
        ta, tb = Tensor(a, requires_grad=True), Tensor(b, requires_grad=True)
        squared_error_sum(ta, tb).backward()
        np.testing.assert_allclose(ta.grad, 2.0 * (a - b), atol=1e-12)
        np.testing.assert_allclose(tb.grad, -2.0 * (a - b), atol=1e-12)

    def test_nll_through_softmax(self, rng):
        logits = rng.normal(size=(2, 2, 4, 4))
        labels = rng.integers(-1, 2, size=(2, 4, 4))

        def loss(t):
            return masked_nll_mean(softmax_channels(t), labels)

        check_gradients(loss, [logits])

    def test_nll_wrt_probabilities_directly(self, rng):
        # the loss is defined for any positive entries, so FD applies as-is
        probs = rng.uniform(0.2, 0.8, size=(1, 2, 3, 3))
        labels = rng.integers(-1, 2, size=(1, 3, 3))
        check_gradients(lambda t: masked_nll_mean(t, labels), [probs])

    def test_composite_softmax_nll_gradient_formula(self, rng):
        # d(loss)/d(logits) = (P - onehot) / count at scored pixels, 0 elsewhere
        logits = rng.normal(size=(2, 3, 4, 4))
        labels = rng.integers(-1, 3, size=(2, 4, 4))
        t = Tensor(logits, requires_grad=True)
        p = softmax_channels(t)
        masked_nll_mean(p, labels).backward()

        valid = labels >= 0
        cnt = int(valid.sum())
        onehot = np.zeros_like(logits)
        n_idx, i_idx, j_idx = np.nonzero(valid)
        onehot[n_idx, labels[valid], i_idx, j_idx] = 1.0
        expected = (p.data - onehot) / cnt
        expected[~valid[:, None, :, :].repeat(3, axis=1)] = 0.0
        assert relative_error(t.grad, expected) < 1e-10

    def test_ignored_pixels_get_bitwise_zero_gradient(self, rng):
        logits = rng.normal(size=(1, 2, 4, 4))
        labels = np.zeros((1, 4, 4), dtype=np.int64)
        labels[0, :2] = -1
        t = Tensor(logits, requires_grad=True)
        masked_nll_mean(softmax_channels(t), labels).backward()
        assert np.all(t.grad[0, :, :2, :] == 0.0)

    def test_all_ignored_gives_zero_loss_and_zero_grads(self, rng):
        logits = rng.normal(size=(1, 2, 3, 3))
        labels = np.full((1, 3, 3), -1, dtype=np.int64)
        t = Tensor(logits, requires_grad=True)
        loss = masked_nll_mean(softmax_channels(t), labels)
        assert loss.item() == 0.0
        loss.backward()
        assert np.all(t.grad == 0.0)


class TestCompositeGraphs:
    def test_encoder_style_chain(self, rng):
        spec_down = ConvSpec(2, 4, 4, 4, stride=2, padding=1, has_bias=False)
        spec_up = ConvSpec(4, 2, 4, 4, stride=2, padding=1, has_bias=False)
        x = rng.normal(size=(1, 2, 8, 8))
        wd = rng.normal(size=(4, 2, 4, 4)) * 0.5
        wu = rng.normal(size=(4, 2, 4, 4)) * 0.5
        target = rng.normal(size=(1, 2, 8, 8))

        def loss(tx, twd, twu):
            h = leaky_relu(conv2d(tx, spec_down, twd), 0.2)
            y = tanh(transposed_conv2d(h, spec_up, twu))
            return squared_error_sum(y, Tensor(target))

        check_gradients(loss, [x, wd, wu])

    def test_two_headed_graph_accumulates_into_shared_input(self, rng):
        spec = ConvSpec(2, 2, 3, 3, padding=1, has_bias=False)
        x = rng.normal(size=(1, 2, 4, 4))
        w1 = rng.normal(size=(2, 2, 3, 3))
        w2 = rng.normal(size=(2, 2, 3, 3))

        def loss(tx, tw1, tw2):
            return conv2d(tx, spec, tw1).sum() + conv2d(tx, spec, tw2).sum()

        check_gradients(loss, [x, w1, w2])
