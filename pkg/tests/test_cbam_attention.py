# -*- coding: utf-8 -*-
"""Channel attention, spatial attention e blocco CBAM completo."""

import numpy as np
import pytest

from cbam_attention import (
    CBAMBlock,
    ChannelAttention,
    SpatialAttention,
    cbam_apply,
    channel_attention,
    spatial_attention,
)
from nn_layers import LayerConfigError
from tensor_autodiff import Tensor, finite_difference_check, mul, precision, sum_all


def _zero(params):
    for p in params:
        p.data[...] = 0.0


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def test_channel_map_is_half_with_zero_mlp(rng):
    ca = ChannelAttention(8, 4, "ca", rng=rng)
    _zero(ca.parameters())
    channel_map, refined = channel_attention(ca, Tensor(rng.standard_normal((2, 8, 5, 5))))
    assert channel_map.shape == (2, 8, 1, 1)
    np.testing.assert_array_equal(channel_map.data, np.full((2, 8, 1, 1), 0.5, dtype=np.float32))


def test_spatially_constant_input_doubles_mlp(rng):
    ca = ChannelAttention(8, 2, "ca", rng=rng)
    ca.b1.data[...] = rng.standard_normal(ca.b1.shape)
    ca.b2.data[...] = rng.standard_normal(ca.b2.shape)
    values = rng.standard_normal(8).astype(np.float32)
    features = np.broadcast_to(values.reshape(1, 8, 1, 1), (1, 8, 4, 4)).copy()

    channel_map, _ = channel_attention(ca, Tensor(features))

    w1, b1 = ca.w1.matrix_view(), ca.b1.data.ravel()
    w2, b2 = ca.w2.matrix_view(), ca.b2.data.ravel()
    mlp = np.maximum(values @ w1.T + b1, 0.0) @ w2.T + b2
    np.testing.assert_allclose(channel_map.data.ravel(), _sigmoid(2.0 * mlp), rtol=1e-5, atol=1e-6)


def test_spatial_map_is_half_with_zero_conv(rng):
    sa = SpatialAttention("sa", rng=rng)
    _zero(sa.parameters())
    spatial_map, _ = spatial_attention(sa, Tensor(rng.standard_normal((1, 4, 6, 6))))
    assert spatial_map.shape == (1, 1, 6, 6)
    np.testing.assert_array_equal(spatial_map.data, np.full((1, 1, 6, 6), 0.5, dtype=np.float32))


def test_zero_block_scales_by_quarter(rng):
    block = CBAMBlock(8, "cbam", reduction_ratio=4, rng=rng)
    _zero(block.parameters())
    features = rng.standard_normal((2, 8, 4, 4)).astype(np.float32)
    out = cbam_apply(block, Tensor(features))
    np.testing.assert_allclose(out.data, 0.25 * features, rtol=1e-6)


def test_zero_input_gives_zero_output(rng):
    block = CBAMBlock(8, "cbam", reduction_ratio=4, rng=rng)
    out = block(Tensor(np.zeros((1, 8, 4, 4))))
    np.testing.assert_array_equal(out.data, np.zeros((1, 8, 4, 4), dtype=np.float32))


def test_attention_never_amplifies(rng):
    block = CBAMBlock(16, "cbam", reduction_ratio=8, rng=rng)
    features = rng.standard_normal((2, 16, 8, 8)).astype(np.float32) * 5.0
    out = block(Tensor(features)).data
    assert out.shape == features.shape
    assert np.all(np.abs(out) <= np.abs(features))


def test_reduction_ratio_must_divide_channels(rng):
    with pytest.raises(LayerConfigError):
        ChannelAttention(12, 8, "ca", rng=rng)


def test_parameter_count_with_bias(rng):
    block = CBAMBlock(32, "cbam", reduction_ratio=8, rng=rng)
    assert sum(p.size for p in block.parameters()) == 391
    without_bias = CBAMBlock(32, "cbam", reduction_ratio=8, rng=rng, mlp_bias=False)
    assert sum(p.size for p in without_bias.parameters()) == 391 - 4 - 32


def test_cbam_gradient_check(rng):
    # valori distinti e ben separati: argmax stabili sotto perturbazione
    values = rng.permutation(np.linspace(-3.0, 3.0, 4 * 6 * 6)).reshape(1, 4, 6, 6)
    with precision(np.float64):
        block = CBAMBlock(4, "cbam", reduction_ratio=2, rng=np.random.default_rng(5))
        weights = Tensor(rng.standard_normal((1, 4, 6, 6)))
        error = finite_difference_check(
            lambda t: sum_all(mul(cbam_apply(block, t), weights)),
            Tensor(values),
            epsilon=1e-5,
        )
    assert error < 1e-3


def test_channel_attention_gradient_check(rng):
    values = rng.permutation(np.linspace(-3.0, 3.0, 2 * 4 * 3 * 3)).reshape(2, 4, 3, 3)
    with precision(np.float64):
        ca = ChannelAttention(4, 2, "ca", rng=np.random.default_rng(1))
        ca.b1.data[...] = 0.1
        ca.b2.data[...] = -0.2
        weights = Tensor(rng.standard_normal((2, 4, 3, 3)))
        error = finite_difference_check(
            lambda t: sum_all(mul(channel_attention(ca, t)[1], weights)),
            Tensor(values),
            epsilon=1e-5,
        )
    assert error < 1e-4


def test_spatial_attention_gradient_check(rng):
    values = rng.permutation(np.linspace(-3.0, 3.0, 1 * 3 * 5 * 5)).reshape(1, 3, 5, 5)
    with precision(np.float64):
        sa = SpatialAttention("sa", rng=np.random.default_rng(2))
        weights = Tensor(rng.standard_normal((1, 3, 5, 5)))
        error = finite_difference_check(
            lambda t: sum_all(mul(spatial_attention(sa, t)[1], weights)),
            Tensor(values),
            epsilon=1e-5,
        )
    assert error < 1e-4
