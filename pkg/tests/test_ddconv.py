"""Dynamic deformable convolution: grid enumeration, reductions, sensitivity, gradients."""

import numpy as np
import pytest

from citnet import tensor as T
from citnet.ddconv import DDConvLayer, base_grid, ddconv_forward, dynamic_weights, predict_offsets
from citnet.errors import ConfigError, DimensionError
from citnet.gradcheck import grad_check


def make_layer(rng, in_ch=2, out_ch=3, n=1, k=3, stride=1, padding=1, dtype=np.float64, **kw):
    return DDConvLayer(in_ch, out_ch, rng, k=k, stride=stride, padding=padding, n=n,
                       dtype=dtype, **kw)


class TestBaseGrid:
    def test_k3_enumeration(self):
        grid = base_grid(3)
        expected = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)]
        assert [tuple(row) for row in grid.offsets] == expected
        assert len(grid) == 9

    def test_k1_single_center(self):
        grid = base_grid(1)
        assert [tuple(r) for r in grid.offsets] == [(0, 0)]

    def test_k2_brute_enumeration(self):
        grid = base_grid(2)
        brute = sorted((dy - 1, dx - 1) for dy in range(2) for dx in range(2))
        assert sorted(tuple(r) for r in grid.offsets) == brute

    def test_invalid_k(self):
        with pytest.raises(ConfigError):
            base_grid(0)


class TestPredictOffsets:
    def test_zero_at_init(self, rng):
        layer = make_layer(rng)
        x = T.as_tensor(rng.standard_normal((2, 2, 6, 6)), np.float64)
        off = predict_offsets(layer, x)
        assert off.shape == (2, 18, 6, 6)
        assert np.array_equal(off.data, np.zeros_like(off.data))

    @pytest.mark.parametrize("stride,padding,size", [(1, 1, 8), (2, 1, 7), (1, 0, 5)])
    def test_spatial_dims_match_conv(self, rng, stride, padding, size):
        layer = make_layer(rng, stride=stride, padding=padding)
        x = T.as_tensor(rng.standard_normal((1, 2, size, size)), np.float64)
        off = predict_offsets(layer, x)
        ref = T.conv2d(x, layer.banks[0], stride=stride, padding=padding)
        assert off.shape[2:] == ref.shape[2:]

    def test_channel_mismatch(self, rng):
        layer = make_layer(rng)
        with pytest.raises(DimensionError):
            predict_offsets(layer, T.as_tensor(rng.standard_normal((1, 5, 6, 6)), np.float64))


class TestDynamicWeights:
    def test_single_bank_passthrough(self, rng):
        layer = make_layer(rng, n=1)
        x = T.as_tensor(rng.standard_normal((2, 2, 6, 6)), np.float64)
        w = dynamic_weights(layer, x)
        assert w.shape == (2, 3, 2, 3, 3)
        assert np.allclose(w.data[0], layer.banks[0].data)
        assert np.allclose(w.data[1], layer.banks[0].data)

    def test_identical_banks_convexity(self, rng):
        layer = make_layer(rng, n=2)
        layer.banks[1].data = layer.banks[0].data.copy()
        x = T.as_tensor(rng.standard_normal((1, 2, 6, 6)), np.float64)
        w = dynamic_weights(layer, x)
        assert np.allclose(w.data[0], layer.banks[0].data, atol=1e-12)

    def test_alpha_simplex_and_hull(self, rng):
        layer = make_layer(rng, n=4)
        x = T.as_tensor(rng.standard_normal((3, 2, 6, 6)), np.float64)
        pooled = T.global_avg_pool(x)
        alpha = T.softmax(layer.coeff_head(pooled), axis=1).data
        assert np.abs(alpha.sum(axis=1) - 1.0).max() < 1e-6
        assert (alpha > 0).all()
        w = dynamic_weights(layer, x).data
        stack = np.stack([b.data for b in layer.banks])
        lo, hi = stack.min(axis=0), stack.max(axis=0)
        assert (w >= lo[None] - 1e-9).all() and (w <= hi[None] + 1e-9).all()

    def test_static_alpha_variant(self, rng):
        layer = make_layer(rng, n=3, static_alpha=True)
        x = T.as_tensor(rng.standard_normal((2, 2, 6, 6)), np.float64)
        w = dynamic_weights(layer, x)
        assert w.shape[0] == 1  # batch-independent
        expected = np.mean([b.data for b in layer.banks], axis=0)  # uniform softmax at init
        assert np.allclose(w.data[0], expected, atol=1e-7)


class TestForward:
    def test_reduction_to_conv2d(self, rng):
        for _ in range(5):
            layer = make_layer(rng, n=1)
            x = T.as_tensor(rng.standard_normal((2, 2, 6, 6)), np.float64)
            out = ddconv_forward(layer, x)
            ref = T.conv2d(x, layer.banks[0], stride=1, padding=1)
            assert np.abs(out.data - ref.data).max() < 1e-6

    def test_constant_input_in_bounds_offsets(self, rng):
        layer = make_layer(rng, in_ch=1, out_ch=2, n=1, padding=0)
        x = T.as_tensor(np.full((1, 1, 7, 7), 0.75), np.float64)
        offsets = T.as_tensor(rng.uniform(-0.45, 0.45, size=(1, 18, 5, 5)), np.float64)
        out = ddconv_forward(layer, x, offsets=offsets)
        ref = T.conv2d(x, layer.banks[0], stride=1, padding=0)
        # away from the border every displaced sample still reads the constant
        assert np.abs(out.data[:, :, 1:4, 1:4] - ref.data[:, :, 1:4, 1:4]).max() < 1e-9

    def test_offset_moves_only_its_own_sample(self, rng):
        layer = make_layer(rng, in_ch=1, out_ch=1, n=1)
        x = T.as_tensor(rng.standard_normal((1, 1, 6, 6)), np.float64)
        m = 4  # center kernel position of a 3x3 grid
        offsets = np.zeros((1, 18, 6, 6))
        offsets[0, 2 * m] = 0.3
        offsets[0, 2 * m + 1] = -0.2
        out = ddconv_forward(layer, x, offsets=T.as_tensor(offsets, np.float64))
        base = ddconv_forward(layer, x, offsets=T.as_tensor(np.zeros_like(offsets), np.float64))
        # expected delta: bank weight at position m times the change in sample m
        grid = np.arange(6.0) - 1.0
        gy, gx = np.meshgrid(grid, grid, indexing="ij")
        my, mx = m // 3, m % 3
        coords0 = np.stack([gy + my, gx + mx])[None]
        coords1 = coords0 + np.array([0.3, -0.2])[None, :, None, None]
        s0 = T.bilinear_sample(x, T.as_tensor(coords0, np.float64)).data
        s1 = T.bilinear_sample(x, T.as_tensor(coords1, np.float64)).data
        expected = base.data + layer.banks[0].data[0, 0, my, mx] * (s1 - s0)
        assert np.abs(out.data - expected).max() < 1e-9

    def test_out_of_bounds_sample_contributes_zero(self, rng):
        layer = make_layer(rng, in_ch=1, out_ch=1, n=1)
        x = T.as_tensor(rng.standard_normal((1, 1, 6, 6)), np.float64)
        m = 0
        offsets = np.zeros((1, 18, 6, 6))
        offsets[0, 2 * m] = 1000.0  # kernel position m leaves the image entirely
        out = ddconv_forward(layer, x, offsets=T.as_tensor(offsets, np.float64))
        crippled = make_layer(rng, in_ch=1, out_ch=1, n=1)
        crippled.banks[0].data = layer.banks[0].data.copy()
        crippled.banks[0].data[0, 0, m // 3, m % 3] = 0.0
        ref = ddconv_forward(crippled, x,
                             offsets=T.as_tensor(np.zeros_like(offsets), np.float64))
        assert np.abs(out.data - ref.data).max() < 1e-9

    def test_channel_mismatch_rejected(self, rng):
        layer = make_layer(rng)
        with pytest.raises(DimensionError):
            ddconv_forward(layer, T.as_tensor(rng.standard_normal((1, 4, 6, 6)), np.float64))


class TestGradients:
    def test_all_parameter_groups(self, rng):
        layer = make_layer(rng, in_ch=2, out_ch=2, n=2, padding=1)
        # push sampling off integer knots so central differences are valid
        layer.offset_head.bias.data += rng.uniform(0.1, 0.35, size=18)
        x = T.param(rng.standard_normal((1, 2, 6, 6)), dtype=np.float64)
        proj = T.as_tensor(rng.standard_normal((1, 2, 6, 6)), np.float64)
        params = [x] + layer.parameters()

        def f(*tensors):
            return T.sum_(T.mul(ddconv_forward(layer, tensors[0]), proj))

        report = grad_check(f, params, h=1e-6, max_elements_per_input=24,
                            rng=np.random.default_rng(3))
        assert report.max_rel_err < 1e-4

    def test_gradient_completeness(self, rng):
        layer = make_layer(rng, n=3)
        layer.offset_head.bias.data += 0.25
        x = T.param(rng.standard_normal((2, 2, 6, 6)), dtype=np.float64)
        T.sum_(T.pow_const(ddconv_forward(layer, x), 2.0)).backward()
        for name, p in layer.named_parameters():
            assert p.grad is not None, name
            assert np.abs(p.grad).max() > 0, f"{name} got zero gradient"


def test_registry_paths(rng):
    layer = make_layer(rng, n=2)
    names = [name for name, _ in layer.named_parameters()]
    assert "banks.0" in names and "banks.1" in names
    assert "offset_head.weight" in names and "coeff_head.weight" in names
