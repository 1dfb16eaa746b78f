import numpy as np
import pytest

from urbanform.segnet.autograd import (
    Adam,
    Tensor,
    add,
    avg_pool2x2,
    batch_norm,
    bilinear_upsample,
    concat_channels,
    conv2d,
    depthwise_conv2d,
    global_avg_pool,
    masked_cross_entropy,
    max_pool2x2,
    no_grad,
    relu,
    softmax_channels,
)


class TestConv:
    def test_identity_1x1_kernel(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.random((2, 3, 5, 5)))
        w = Tensor(np.eye(3).reshape(3, 3, 1, 1))
        out = conv2d(x, w)
        assert np.allclose(out.data, x.data)

    def test_direct_summation_oracle_valid(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        w = Tensor(np.ones((1, 1, 2, 2)))
        out = conv2d(x, w, padding="valid")
        assert out.data.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == 10.0

    def test_dilation_effective_span(self):
        # a 3x3 kernel at dilation 2 spans 5x5: valid output of 5x5 input is 1x1
        x = Tensor(np.arange(25.0).reshape(1, 1, 5, 5))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = conv2d(x, w, dilation=2, padding="valid")
        assert out.data.shape == (1, 1, 1, 1)
        corners = x.data[0, 0][::2, ::2].sum()
        assert out.data[0, 0, 0, 0] == corners

    def test_same_padding_preserves_dims(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.random((1, 2, 9, 7)))
        w = Tensor(rng.random((4, 2, 3, 3)))
        for d in (1, 2, 4):
            out = conv2d(x, w, dilation=d, padding="same")
            assert out.data.shape == (1, 4, 9, 7)

    def test_stride2_halves_even_dims(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.random((1, 2, 8, 8)))
        w = Tensor(rng.random((3, 2, 3, 3)))
        out = conv2d(x, w, stride=2, padding="same")
        assert out.data.shape == (1, 3, 4, 4)

    def test_channel_mismatch_rejected(self):
        x = Tensor(np.zeros((1, 3, 4, 4)))
        w = Tensor(np.zeros((2, 4, 3, 3)))
        with pytest.raises(ValueError, match="channels"):
            conv2d(x, w)

    def test_matches_bruteforce_random(self):
        rng = np.random.default_rng(3)
        x = rng.random((2, 3, 6, 6))
        w = rng.random((4, 3, 3, 3))
        for stride, dilation in ((1, 1), (1, 2), (2, 1)):
            out = conv2d(Tensor(x), Tensor(w), stride=stride,
                         dilation=dilation, padding="valid").data
            ek = 2 * dilation + 1
            oh = (6 - ek) // stride + 1
            expect = np.zeros((2, 4, oh, oh))
            for n in range(2):
                for f in range(4):
                    for y in range(oh):
                        for xx in range(oh):
                            acc = 0.0
                            for c in range(3):
                                for i in range(3):
                                    for j in range(3):
                                        acc += (w[f, c, i, j] *
                                                x[n, c, y * stride + i * dilation,
                                                  xx * stride + j * dilation])
                            expect[n, f, y, xx] = acc
            assert np.allclose(out, expect, atol=1e-12), (stride, dilation)

    def test_depthwise_matches_grouped_conv(self):
        rng = np.random.default_rng(4)
        x = rng.random((2, 3, 6, 6))
        wd = rng.random((3, 3, 3))
        out = depthwise_conv2d(Tensor(x), Tensor(wd)).data
        # equivalent full conv with a block-diagonal kernel
        w_full = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w_full[c, c] = wd[c]
        expect = conv2d(Tensor(x), Tensor(w_full)).data
        assert np.allclose(out, expect, atol=1e-12)


class TestPoolingUpsample:
    def test_max_pool(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert max_pool2x2(x).data[0, 0, 0, 0] == 4.0

    def test_avg_pool(self):
        x = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert avg_pool2x2(x).data[0, 0, 0, 0] == 2.5

    def test_odd_dims_rejected(self):
        with pytest.raises(ValueError, match="even"):
            max_pool2x2(Tensor(np.zeros((1, 1, 3, 4))))

    def test_global_pool(self):
        rng = np.random.default_rng(5)
        x = rng.random((2, 3, 4, 4))
        out = global_avg_pool(Tensor(x))
        assert out.data.shape == (2, 3, 1, 1)
        assert np.allclose(out.data[..., 0, 0], x.mean(axis=(2, 3)))

    def test_upsample_constant_stays_constant(self):
        x = Tensor(np.full((1, 2, 3, 3), 7.5))
        out = bilinear_upsample(x, 9, 11)
        assert np.allclose(out.data, 7.5)

    def test_upsample_align_corners_row(self):
        x = Tensor(np.array([[[[0.0, 1.0]]]]))
        out = bilinear_upsample(x, 1, 4)
        assert np.allclose(out.data[0, 0, 0], [0.0, 1 / 3, 2 / 3, 1.0])

    def test_upsample_identity_when_same_size(self):
        rng = np.random.default_rng(6)
        x = rng.random((1, 2, 5, 5))
        out = bilinear_upsample(Tensor(x), 5, 5)
        assert np.allclose(out.data, x, atol=1e-12)

    def test_upsample_corners_map_exactly(self):
        rng = np.random.default_rng(7)
        x = rng.random((1, 1, 3, 4))
        out = bilinear_upsample(Tensor(x), 7, 9).data
        assert out[0, 0, 0, 0] == pytest.approx(x[0, 0, 0, 0])
        assert out[0, 0, -1, -1] == pytest.approx(x[0, 0, -1, -1])

    def test_downsample_rejected(self):
        with pytest.raises(ValueError, match="smaller"):
            bilinear_upsample(Tensor(np.zeros((1, 1, 4, 4))), 2, 4)


class TestBatchNorm:
    def test_training_normalizes_batch(self):
        rng = np.random.default_rng(8)
        x = rng.random((4, 3, 5, 5)) * 3 + 1
        gamma, beta = Tensor(np.ones(3)), Tensor(np.zeros(3))
        rm, rv = np.zeros(3), np.ones(3)
        out = batch_norm(Tensor(x), gamma, beta, rm, rv, training=True)
        assert np.allclose(out.data.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
        assert np.allclose(out.data.var(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_running_moments_updated(self):
        rng = np.random.default_rng(9)
        x = rng.random((2, 2, 4, 4)) + 5.0
        rm, rv = np.zeros(2), np.ones(2)
        batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv,
                   training=True, momentum=0.1)
        assert np.allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))

    def test_inference_uses_running_moments(self):
        x = np.full((1, 1, 2, 2), 3.0)
        rm, rv = np.array([1.0]), np.array([4.0])
        out = batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)),
                         rm, rv, training=False, eps=0.0)
        assert np.allclose(out.data, (3.0 - 1.0) / 2.0)
        assert rm[0] == 1.0  # inference never touches running stats


class TestLossAndGraph:
    def test_masked_loss_ignores_unmasked_cells(self):
        rng = np.random.default_rng(10)
        logits = rng.random((1, 3, 4, 4))
        labels = rng.integers(0, 3, (1, 4, 4))
        mask = np.zeros((1, 4, 4), bool)
        mask[0, 1, 1] = True
        base = masked_cross_entropy(Tensor(logits), labels, mask).item()
        flipped = labels.copy()
        flipped[0, 2, 2] = (flipped[0, 2, 2] + 1) % 3  # unmasked cell
        after = masked_cross_entropy(Tensor(logits), flipped, mask).item()
        assert base == after

    def test_empty_mask_rejected(self):
        with pytest.raises(ValueError, match="mask"):
            masked_cross_entropy(Tensor(np.zeros((1, 2, 2, 2))),
                                 np.zeros((1, 2, 2), int), np.zeros((1, 2, 2), bool))

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(11)
        probs = softmax_channels(rng.standard_normal((2, 5, 3, 3)) * 10)
        assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-12)

    def test_loss_gradient_matches_softmax_minus_onehot(self):
        rng = np.random.default_rng(12)
        logits = Tensor(rng.standard_normal((1, 3, 2, 2)), requires_grad=True)
        labels = rng.integers(0, 3, (1, 2, 2))
        mask = np.ones((1, 2, 2), bool)
        loss = masked_cross_entropy(logits, labels, mask)
        loss.backward()
        p = softmax_channels(logits.data)
        onehot = np.zeros_like(p)
        for r in range(2):
            for c in range(2):
                onehot[0, labels[0, r, c], r, c] = 1.0
        assert np.allclose(logits.grad, (p - onehot) / 4.0, atol=1e-12)

    def test_residual_add_accumulates_both_paths(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        y = add(relu(x), x)
        loss = masked_cross_entropy(
            concat_channels([y, y]), np.zeros((1, 2, 2), int), np.ones((1, 2, 2), bool)
        )
        loss.backward()
        assert x.grad is not None and x.grad.shape == x.data.shape

    def test_no_grad_skips_graph(self):
        x = Tensor(np.ones((1, 1, 2, 2)), requires_grad=True)
        with no_grad():
            out = relu(x)
        assert out._parents == ()

    def test_zero_input_zero_bias_zero_first_layer_gradient(self):
        x = Tensor(np.zeros((1, 2, 4, 4)))
        w = Tensor(np.random.default_rng(13).random((3, 2, 3, 3)), requires_grad=True)
        b = Tensor(np.zeros(3), requires_grad=True)
        out = conv2d(x, w, b)
        loss = masked_cross_entropy(out, np.zeros((1, 4, 4), int), np.ones((1, 4, 4), bool))
        loss.backward()
        assert np.allclose(w.grad, 0.0)


class TestAdam:
    def test_converges_on_quadratic(self):
        w = Tensor(np.array([5.0, -3.0]), requires_grad=True)
        opt = Adam({"w": w}, lr=0.1)
        for _ in range(500):
            opt.zero_grad()
            w.grad = 2.0 * w.data
            opt.step()
        assert np.all(np.abs(w.data) < 1e-3)

    def test_deterministic(self):
        def run():
            w = Tensor(np.array([1.0]), requires_grad=True)
            opt = Adam({"w": w}, lr=0.01)
            rng = np.random.default_rng(0)
            for _ in range(50):
                opt.zero_grad()
                w.grad = rng.standard_normal(1)
                opt.step()
            return w.data.copy()

        assert np.array_equal(run(), run())
