"""Numeric-core tests: every backward pass is checked against independent
oracles (nested-loop convolution, central finite differences)."""

import math

import numpy as np
import pytest

from rtcaptcha import build_model
from rtcaptcha.tensor import (
    Conv2d,
    Dense,
    DenseCatBlock,
    Flatten,
    GradientTape,
    MaxPool2d,
    Model,
    ReLU,
    ResidualBlock,
    ShapeError,
    backward,
    conv2d,
    cross_entropy_batch,
    finite_difference_gradient,
    forward,
    load_model,
    loss_and_input_gradient,
    save_model,
    softmax_cross_entropy,
)


def conv2d_loop_oracle(x, kernel, stride=1, padding=0):
    """Direct six-nested-loop cross-correlation; the reference for conv2d."""
    if padding:
        x = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    h, w, c_in = x.shape
    k, _, _, c_out = kernel.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    out = np.zeros((ho, wo, c_out), dtype=np.float64)
    for oy in range(ho):
        for ox in range(wo):
            for oc in range(c_out):
                acc = 0.0
                for i in range(k):
                    for j in range(k):
                        for ic in range(c_in):
                            acc += x[oy * stride + i, ox * stride + j, ic] * kernel[i, j, ic, oc]
                out[oy, ox, oc] = acc
    return out


class TestConv2d:
    def test_scalar_product(self):
        x = np.array([[[5.0]]])
        k = np.array([[[[2.0]]]])
        assert conv2d(x, k)[0, 0, 0] == 10.0

    def test_window_sum(self):
        x = np.ones((3, 3, 1))
        k = np.ones((3, 3, 1, 1))
        assert conv2d(x, k)[0, 0, 0] == 9.0

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 0), (2, 1)])
    def test_matches_loop_oracle(self, stride, padding, rng):
        x = rng.random((8, 8, 2))
        k = rng.random((3, 3, 2, 4))
        got = conv2d(x, k, stride, padding)
        want = conv2d_loop_oracle(x, k, stride, padding)
        assert got.shape == want.shape
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_output_extent(self, rng):
        x = rng.random((9, 9, 1))
        k = rng.random((3, 3, 1, 2))
        out = conv2d(x, k, stride=2, padding=1)
        assert out.shape == ((9 + 2 - 3) // 2 + 1, (9 + 2 - 3) // 2 + 1, 2)

    def test_channel_mismatch_rejected(self, rng):
        with pytest.raises(ShapeError, match="channels"):
            conv2d(rng.random((4, 4, 3)), rng.random((3, 3, 2, 1)))

    def test_even_kernel_rejected(self, rng):
        with pytest.raises(ShapeError, match="odd"):
            conv2d(rng.random((4, 4, 1)), rng.random((2, 2, 1, 1)))


class TestForward:
    def test_zero_weight_dense_gives_zero_logits(self, rng):
        model = Model(
            [Flatten(), Dense(np.zeros((12, 4), np.float32), np.zeros(4, np.float32))],
            (2, 2, 3), 4,
        )
        logits, _ = forward(model, rng.random((3, 2, 2, 3)).astype(np.float32))
        assert np.all(logits == 0.0)

    def test_identity_dense_copies_one_hot(self):
        model = Model(
            [Flatten(), Dense(np.eye(4, dtype=np.float32), np.zeros(4, np.float32))],
            (1, 1, 4), 4,
        )
        x = np.zeros((1, 1, 1, 4), np.float32)
        x[0, 0, 0, 2] = 1.0
        logits, _ = forward(model, x)
        np.testing.assert_array_equal(logits[0], x[0, 0, 0])

    def test_two_conv_model_matches_layerwise_reference(self, rng):
        c1 = Conv2d.init(3, 1, 2, rng=np.random.default_rng(5), dtype=np.float64)
        c2 = Conv2d.init(3, 2, 3, rng=np.random.default_rng(6), dtype=np.float64)
        model = Model([c1, ReLU(), c2, Flatten(), Dense(np.eye(12), np.zeros(12))], (6, 6, 1), 12)
        x = rng.random((1, 6, 6, 1))
        logits, _ = forward(model, x)
        # hand-rolled reference, layer by layer via the loop oracle
        h1 = conv2d_loop_oracle(x[0], c1.kernel) + c1.bias
        h1 = np.maximum(h1, 0.0)
        h2 = conv2d_loop_oracle(h1, c2.kernel) + c2.bias
        np.testing.assert_allclose(logits[0], h2.reshape(-1), rtol=1e-10)

    def test_batch_shape_mismatch(self, rng):
        model = build_model("tiny_lenet", seed=0, input_hw=8)
        with pytest.raises(ShapeError):
            forward(model, rng.random((1, 9, 9, 3)).astype(np.float32))

    def test_nonfinite_parameter_rejected(self, rng):
        model = build_model("tiny_lenet", seed=0, input_hw=8)
        model.parameters()[0][0] = np.nan
        with pytest.raises(FloatingPointError):
            forward(model, rng.random((1, 8, 8, 3)).astype(np.float32))

    def test_tape_replay_is_bit_identical(self, rng):
        model = build_model("tiny_vgg", seed=4, input_hw=8)
        x = rng.random((2, 8, 8, 3)).astype(np.float32)
        l1, t1 = forward(model, x)
        l2, t2 = forward(model, x)
        np.testing.assert_array_equal(l1, l2)
        _, dl = cross_entropy_batch(l1, np.array([1, 2]))
        g1 = backward(model, t1, dl.astype(np.float32))[0]
        g2 = backward(model, t2, dl.astype(np.float32))[0]
        np.testing.assert_array_equal(g1, g2)


class TestSoftmaxCrossEntropy:
    def test_large_logit_stability(self):
        assert softmax_cross_entropy(np.array([1000.0, 0.0, 0.0]), 0) == pytest.approx(0.0, abs=1e-6)

    def test_uniform_55_classes(self):
        assert softmax_cross_entropy(np.zeros(55), 12) == pytest.approx(math.log(55), abs=1e-9)

    def test_matches_naive_float64(self, rng):
        logits = rng.normal(0, 3, 20)
        naive = -np.log(np.exp(logits[7]) / np.exp(logits).sum())
        assert softmax_cross_entropy(logits, 7) == pytest.approx(naive, abs=1e-6)

    def test_label_out_of_range(self):
        with pytest.raises(IndexError):
            softmax_cross_entropy(np.zeros(3), 3)

    def test_nonnegative_with_equality_iff_certain(self, rng):
        for _ in range(50):
            logits = rng.normal(0, 5, 8)
            loss = softmax_cross_entropy(logits, 0)
            assert loss >= 0.0
        # equality only in the certain limit
        assert softmax_cross_entropy(np.array([50.0, -50.0]), 0) < 1e-9


class TestGradients:
    def test_zero_final_weights_give_zero_input_grad(self, rng):
        model = build_model("tiny_lenet", seed=0, input_hw=8)
        model.layers[-1].weight[...] = 0.0
        model.layers[-1].bias[...] = 0.0
        _, grad = loss_and_input_gradient(model, rng.random((8, 8, 3)).astype(np.float32), 2)
        np.testing.assert_array_equal(grad, np.zeros_like(grad))

    def test_linear_one_pixel_model_fd_exact(self):
        # J(x) = CE of logits [w*x, 0]; FD of a linear-in-logit model is
        # exact only in the limit, but the single-weight dense model below is
        # linear so its FD at any h matches the analytic gradient closely.
        w = np.array([[1.5, -0.5]])
        model = Model([Flatten(), Dense(w, np.zeros(2))], (1, 1, 1), 2)
        x = np.array([[[0.3]]])
        _, g = loss_and_input_gradient(model, x, 0)
        fd = finite_difference_gradient(model, x, 0, h=1e-4)
        np.testing.assert_allclose(g, fd, rtol=1e-6)

    def test_fd_h_must_be_positive(self):
        model = build_model("tiny_lenet", seed=0, input_hw=8)
        with pytest.raises(ValueError):
            finite_difference_gradient(model, np.zeros((8, 8, 3)), 0, h=0.0)

    def test_fd_error_shrinks_with_h(self):
        # smooth model (no relu kinks near the evaluation point): second-order
        # convergence means the h and h/2 errors differ by about 4x
        rng = np.random.default_rng(11)
        model = Model([Flatten(), Dense(rng.normal(0, 1, (12, 3)), np.zeros(3))], (2, 2, 3), 3)
        x = rng.random((2, 2, 3))
        _, g = loss_and_input_gradient(model.astype(np.float64), x, 1)
        e1 = np.abs(finite_difference_gradient(model, x, 1, h=2e-2) - g).max()
        e2 = np.abs(finite_difference_gradient(model, x, 1, h=1e-2) - g).max()
        assert e2 < e1 / 2.5

    @pytest.mark.parametrize("arch", ["tiny_lenet", "tiny_vgg", "tiny_resnet", "tiny_dense"])
    def test_input_gradient_matches_fd(self, arch):
        model = build_model(arch, seed=3, input_hw=8).astype(np.float64)
        rng = np.random.default_rng(99)
        x = rng.random((8, 8, 3))
        y = int(rng.integers(55))
        _, g = loss_and_input_gradient(model, x, y)
        fd = finite_difference_gradient(model, x, y, h=1e-5)
        scale = max(np.abs(g).max(), np.abs(fd).max(), 1e-12)
        assert np.abs(g - fd).max() / scale < 1e-5

    def test_parameter_gradients_match_fd(self):
        # bump every parameter of a small model; checks conv/dense/bias grads
        model = build_model("tiny_dense", seed=5, input_hw=8).astype(np.float64)
        rng = np.random.default_rng(17)
        x = rng.random((2, 8, 8, 3))
        y = np.array([3, 40])

        def loss_value():
            logits, _ = forward(model, x)
            losses, _ = cross_entropy_batch(logits, y)
            return float(losses.mean())

        logits, tape = forward(model, x)
        _, dl = cross_entropy_batch(logits, y)
        _, grads = backward(model, tape, dl / 2)
        h = 1e-6
        for p, g in zip(model.parameters(), grads):
            flat = p.reshape(-1)
            for idx in rng.choice(flat.size, size=min(4, flat.size), replace=False):
                orig = flat[idx]
                flat[idx] = orig + h
                up = loss_value()
                flat[idx] = orig - h
                down = loss_value()
                flat[idx] = orig
                fd = (up - down) / (2 * h)
                assert g.reshape(-1)[idx] == pytest.approx(fd, rel=1e-4, abs=1e-9)


class TestMaxPoolTies:
    def test_gradient_routes_to_first_maximal_element(self):
        pool = MaxPool2d(2)
        x = np.full((1, 2, 2, 1), 0.5, np.float32)  # all tied
        y, cache = pool.forward(x)
        assert y[0, 0, 0, 0] == 0.5
        dx, _ = pool.backward(np.ones_like(y), cache)
        np.testing.assert_array_equal(dx[0, :, :, 0], [[1.0, 0.0], [0.0, 0.0]])


class TestShapeAlgebra:
    def test_static_validation_catches_mismatch(self):
        with pytest.raises(ShapeError, match="layer 1"):
            Model([Flatten(), Dense(np.zeros((5, 3)), np.zeros(3))], (2, 2, 3), 3)

    def test_forward_shape_equals_declared(self, rng):
        model = build_model("tiny_resnet", seed=0)
        assert model.validate() == (55,)
        logits, _ = forward(model, rng.random((2, 64, 64, 3)).astype(np.float32))
        assert logits.shape == (2, 55)

    def test_block_shape_rules(self):
        with pytest.raises(ShapeError):
            ResidualBlock(
                Conv2d(np.zeros((3, 3, 4, 8), np.float32), np.zeros(8, np.float32), 1, 1),
                Conv2d(np.zeros((3, 3, 8, 8), np.float32), np.zeros(8, np.float32), 1, 1),
            ).out_shape((8, 8, 4))
        blk = DenseCatBlock(Conv2d(np.zeros((3, 3, 4, 6), np.float32), np.zeros(6, np.float32), 1, 1))
        assert blk.out_shape((8, 8, 4)) == (8, 8, 10)


class TestCheckpoint:
    def test_roundtrip_bit_identical(self, tmp_path, rng):
        model = build_model("tiny_dense", seed=9, input_hw=8)
        path = tmp_path / "m.rtcm"
        save_model(model, path)
        clone = load_model(path)
        x = rng.random((2, 8, 8, 3)).astype(np.float32)
        np.testing.assert_array_equal(forward(model, x)[0], forward(clone, x)[0])
        assert (tmp_path / "m.rtcm.json").exists()

    def test_magic_and_version_checked(self, tmp_path):
        path = tmp_path / "bad.rtcm"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_model(path)

    def test_payload_is_little_endian_f32(self, tmp_path):
        model = Model([Flatten(), Dense(np.full((3, 2), 0.5, np.float32), np.zeros(2, np.float32))],
                      (1, 1, 3), 2)
        path = tmp_path / "m.rtcm"
        save_model(model, path)
        raw = path.read_bytes()
        assert raw[:4] == b"RTCM"
        assert int.from_bytes(raw[4:6], "little") == 1
        payload = np.frombuffer(raw, dtype="<f4", offset=len(raw) - 8 * 4)
        np.testing.assert_array_equal(payload[:6], np.full(6, 0.5, "<f4"))
