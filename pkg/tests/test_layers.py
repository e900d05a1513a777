"""Forward-pass correctness of the layer ops against naive references."""

import numpy as np
import pytest
from reference import batchnorm_naive, conv2d_naive, conv_out_extent, dense_naive

from yieldnet.errors import GraphBuildError
from yieldnet.tensor import LayerSpec, conv_geometry, conv_spec, dense_spec, make_layer


def build_conv(kh, kw, stride, padding, cin, cout, in_shape, seed=0):
    layer = make_layer(conv_spec(kh, kw, stride, padding, cout), "conv")
    layer.build((*in_shape, cin), np.random.default_rng(seed))
    return layer


class TestConv2D:
    def test_hand_example_2x2_ones(self):
        x = np.arange(1.0, 10.0).reshape(1, 3, 3, 1)
        layer = build_conv(2, 2, 1, "valid", 1, 1, (3, 3))
        layer.params.arrays["weights"] = np.ones((2, 2, 1, 1))
        layer.params.arrays["bias"] = np.zeros(1)
        y = layer.forward(x, "infer")
        assert np.array_equal(y[0, :, :, 0], [[12, 16], [24, 28]])

    def test_identity_filter(self, rng):
        x = rng.standard_normal((2, 4, 5, 3))
        layer = build_conv(1, 1, 1, "valid", 3, 3, (4, 5))
        layer.params.arrays["weights"] = np.eye(3).reshape(1, 1, 3, 3)
        layer.params.arrays["bias"] = np.zeros(3)
        assert np.array_equal(layer.forward(x, "infer"), x)

    def test_backbone_shape_chain(self):
        # 30x32 -> 12x13 -> 4x5 -> 2x3 through the first three conv layers
        assert conv_geometry(30, 32, 7, 7, 2, "valid")[:2] == (12, 13)
        assert conv_geometry(12, 13, 5, 5, 2, "valid")[:2] == (4, 5)
        assert conv_geometry(4, 5, 5, 5, 2, "same")[:2] == (2, 3)

    @pytest.mark.parametrize("stride,padding", [(1, "valid"), (2, "valid"),
                                                (1, "same"), (2, "same")])
    def test_matches_nested_loop_oracle(self, rng, stride, padding):
        x = rng.standard_normal((2, 6, 6, 3))
        layer = build_conv(3, 3, stride, padding, 3, 4, (6, 6), seed=7)
        w = layer.params.arrays["weights"]
        b = rng.standard_normal(4)
        layer.params.arrays["bias"] = b
        got = layer.forward(x, "infer")
        want = conv2d_naive(x, w, b, stride, padding)
        assert got.shape == want.shape
        assert np.max(np.abs(got - want)) < 1e-9

    def test_same_padding_favors_bottom_right(self):
        # 4 wide, k=5, s=2: total pad 3 -> 1 before, 2 after
        _, _, pads = conv_geometry(4, 4, 5, 5, 2, "same")
        assert pads == (1, 2, 1, 2)

    def test_channel_mismatch_raises(self, rng):
        layer = build_conv(2, 2, 1, "valid", 3, 4, (5, 5))
        with pytest.raises(ValueError, match="expected input"):
            layer.forward(rng.standard_normal((1, 5, 5, 2)), "infer")

    def test_filter_too_large_raises(self):
        with pytest.raises(GraphBuildError, match="does not fit"):
            conv_geometry(3, 3, 7, 7, 1, "valid")

    def test_nonpositive_stride_raises(self):
        with pytest.raises(ValueError, match="stride"):
            conv_geometry(5, 5, 3, 3, 0, "valid")
        with pytest.raises(ValueError, match="stride"):
            conv_spec(3, 3, -1, "valid", 4)

    @pytest.mark.parametrize("h,w,k,s,padding,expect", [
        (30, 32, 7, 2, "valid", (12, 13)),
        (12, 13, 5, 2, "valid", (4, 5)),
        (9, 9, 3, 3, "same", (3, 3)),
        (10, 7, 4, 2, "valid", (4, 2)),
    ])
    def test_output_extent_formulas(self, h, w, k, s, padding, expect):
        oh, ow, _ = conv_geometry(h, w, k, k, s, padding)
        assert (oh, ow) == expect
        assert oh == conv_out_extent(h, k, s, padding)
        assert ow == conv_out_extent(w, k, s, padding)


class TestBatchNorm:
    def make(self, channels, eps=1e-5):
        layer = make_layer(LayerSpec(kind="batchnorm", epsilon=eps), "bn")
        layer.build((channels,), np.random.default_rng(0))
        return layer

    def test_hand_example_three_values(self):
        layer = self.make(1, eps=0.0)
        y = layer.forward(np.array([[1.0], [2.0], [3.0]]), "train")
        root = np.sqrt(1.5)  # 1 / sqrt(population variance 2/3)
        assert np.allclose(y[:, 0], [-root, 0.0, root], atol=1e-12)

    def test_standardized_input_unchanged(self, rng):
        layer = self.make(2, eps=0.0)
        x = rng.standard_normal((64, 2))
        x = (x - x.mean(axis=0)) / x.std(axis=0)
        assert np.allclose(layer.forward(x, "train"), x, atol=1e-9)

    def test_infer_affine_identity(self):
        layer = self.make(1)
        layer.params.arrays["gamma"] = np.array([2.0])
        layer.params.arrays["beta"] = np.array([1.0])
        layer.spec = LayerSpec(kind="batchnorm", epsilon=0.0)
        y = layer.forward(np.array([[1.0]]), "infer")
        assert np.allclose(y, [[3.0]], atol=1e-12)

    def test_matches_naive_oracle(self, rng):
        layer = self.make(3)
        layer.params.arrays["gamma"] = rng.uniform(0.5, 2.0, 3)
        layer.params.arrays["beta"] = rng.standard_normal(3)
        x = rng.standard_normal((4, 5, 6, 3))
        got = layer.forward(x, "train")
        want = batchnorm_naive(x, layer.params.arrays["gamma"],
                               layer.params.arrays["beta"], 1e-5)
        assert np.max(np.abs(got - want)) < 1e-9

    def test_train_mode_normalizes(self, rng):
        layer = self.make(4, eps=0.0)
        x = rng.uniform(-3, 7, size=(6, 5, 4))
        y = layer.forward(x, "train").reshape(-1, 4)
        assert np.max(np.abs(y.mean(axis=0))) < 1e-9
        assert np.max(np.abs(y.var(axis=0) - 1.0)) < 1e-6

    def test_running_stats_update(self):
        layer = self.make(1)
        x = np.array([[2.0], [4.0]])
        layer.forward(x, "train")
        p = layer.params.arrays
        assert np.isclose(p["running_mean"][0], 0.99 * 0.0 + 0.01 * 3.0)
        assert np.isclose(p["running_var"][0], 0.99 * 1.0 + 0.01 * 1.0)

    def test_zero_variance_with_zero_eps_raises(self):
        layer = self.make(1, eps=0.0)
        with pytest.raises(ZeroDivisionError):
            layer.forward(np.array([[5.0], [5.0]]), "train")

    def test_single_value_train_raises(self):
        layer = self.make(1)
        with pytest.raises(ValueError, match=">= 2"):
            layer.forward(np.array([[1.0]]), "train")


class TestReLU:
    def test_mixed_signs(self):
        layer = make_layer(LayerSpec(kind="relu"), "relu")
        assert np.array_equal(
            layer.forward(np.array([-1.0, 0.0, 2.0]), "infer"), [0.0, 0.0, 2.0])

    def test_all_positive_unchanged(self, rng):
        layer = make_layer(LayerSpec(kind="relu"), "relu")
        x = rng.uniform(0.1, 5.0, size=(3, 4))
        assert np.array_equal(layer.forward(x, "infer"), x)

    def test_all_negative_zeros(self, rng):
        layer = make_layer(LayerSpec(kind="relu"), "relu")
        x = rng.uniform(-5.0, -0.1, size=(3, 4))
        assert np.array_equal(layer.forward(x, "infer"), np.zeros_like(x))


class TestDense:
    def make(self, fan_in, units, seed=0):
        layer = make_layer(dense_spec(units), "fc")
        layer.build((fan_in,), np.random.default_rng(seed))
        return layer

    def test_hand_example(self):
        layer = self.make(2, 2)
        layer.params.arrays["weights"] = np.array([[1.0, 2.0], [3.0, 4.0]])
        layer.params.arrays["bias"] = np.zeros(2)
        assert np.array_equal(layer.forward(np.array([[1.0, 1.0]]), "infer"),
                              [[4.0, 6.0]])

    def test_identity_weights(self, rng):
        layer = self.make(3, 3)
        layer.params.arrays["weights"] = np.eye(3)
        layer.params.arrays["bias"] = np.zeros(3)
        x = rng.standard_normal((4, 3))
        assert np.array_equal(layer.forward(x, "infer"), x)

    def test_zero_weights_constant_bias(self, rng):
        layer = self.make(3, 1)
        layer.params.arrays["weights"] = np.zeros((3, 1))
        layer.params.arrays["bias"] = np.array([5.0])
        y = layer.forward(rng.standard_normal((6, 3)), "infer")
        assert np.array_equal(y, np.full((6, 1), 5.0))

    def test_matches_naive_oracle(self, rng):
        layer = self.make(5, 4, seed=3)
        x = rng.standard_normal((7, 5))
        want = dense_naive(x, layer.params.arrays["weights"],
                           layer.params.arrays["bias"])
        assert np.max(np.abs(layer.forward(x, "infer") - want)) < 1e-9

    def test_dimension_mismatch_raises(self, rng):
        layer = self.make(5, 4)
        with pytest.raises(ValueError, match="expected input"):
            layer.forward(rng.standard_normal((2, 6)), "infer")
