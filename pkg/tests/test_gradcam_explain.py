# -*- coding: utf-8 -*-
"""Grad-CAM, colormap, overlay e spiegazione da file."""

from dataclasses import replace

import numpy as np
import pytest
from PIL import Image

from config import CONFIG
from data_pipeline import (
    BatchLoader,
    load_image,
    planted_quadrant,
    quadrant_slices,
    stratified_split,
    synth_dataset,
)
from gradcam_explain import (
    Heatmap,
    OverlayError,
    UnknownLayerError,
    apply_colormap,
    compute_gradcam,
    explain_image,
    overlay,
    upsample_bilinear,
    valid_layer_names,
)
from model_assembly import build_model, forward
from tensor_autodiff import Tensor
from trainer import TrainConfig, evaluate_split, fit


def _image(rng, size=32):
    return Tensor(rng.random((1, 3, size, size)).astype(np.float32))


def _layers(model):
    return {layer.name: layer for layer in model.layers}

# ============================================================================
# COLORMAP / OVERLAY
# ============================================================================

def test_colormap_endpoints_and_midpoints():
    anchors = np.array(CONFIG['COLORMAP_ANCHORS'], dtype=np.float64)
    colors = apply_colormap(np.array([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]))
    np.testing.assert_allclose(colors, anchors, atol=1e-9)
    np.testing.assert_allclose(apply_colormap(np.array([1.0 / 6.0])), [[0.0, 127.5, 127.5]], atol=1e-9)


def test_overlay_alpha_zero_returns_original(rng):
    original = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
    heatmap = Heatmap(rng.random((8, 8)), "block4", 0)
    np.testing.assert_array_equal(overlay(heatmap, original, alpha=0.0).pixels, original)


def test_overlay_alpha_one_full_heat_is_red(rng):
    original = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
    out = overlay(Heatmap(np.ones((4, 4)), "block4", 0), original, alpha=1.0).pixels
    np.testing.assert_array_equal(out, np.broadcast_to([255, 0, 0], (4, 4, 3)))


def test_overlay_half_alpha_cold_map(rng):
    original = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
    out = overlay(Heatmap(np.zeros((4, 4)), "block4", 0), original, alpha=0.5).pixels
    expected = np.rint(0.5 * np.array([0.0, 0.0, 255.0]) + 0.5 * original.astype(np.float64))
    np.testing.assert_array_equal(out, expected.astype(np.uint8))


@pytest.mark.parametrize("alpha, shape", [(1.5, (4, 4, 3)), (-0.1, (4, 4, 3)), (0.4, (5, 4, 3)), (0.4, (4, 4))])
def test_overlay_rejects_bad_inputs(alpha, shape):
    with pytest.raises(OverlayError):
        overlay(Heatmap(np.zeros((4, 4)), "block4", 0), np.zeros(shape, dtype=np.uint8), alpha=alpha)


def test_upsample_keeps_corners(rng):
    values = rng.random((4, 4))
    up = upsample_bilinear(values, (16, 16))
    assert up.shape == (16, 16)
    for (i, j), (k, m) in [((0, 0), (0, 0)), ((0, -1), (0, -1)), ((-1, 0), (-1, 0)), ((-1, -1), (-1, -1))]:
        assert up[i, j] == pytest.approx(values[k, m])
    assert up.min() >= values.min() - 1e-12 and up.max() <= values.max() + 1e-12

# ============================================================================
# GRAD-CAM
# ============================================================================

def test_unknown_layer_lists_valid_names(tiny_model, rng):
    with pytest.raises(UnknownLayerError) as info:
        compute_gradcam(tiny_model, _image(rng), 0, layer="block9")
    assert "block4" in info.value.valid
    assert info.value.valid == valid_layer_names(tiny_model)


def test_target_class_out_of_range(tiny_model, rng):
    with pytest.raises(ValueError):
        compute_gradcam(tiny_model, _image(rng), 3)


def test_heatmap_shape_range_and_cleanup(tiny_model, rng):
    heatmap = compute_gradcam(tiny_model, _image(rng), 1)
    assert heatmap.shape == (32, 32)
    assert heatmap.source_layer == "block4"
    assert heatmap.values.min() >= 0.0 and heatmap.values.max() <= 1.0
    if not heatmap.is_zero:
        assert heatmap.values.max() == pytest.approx(1.0)
    assert all(p.grad is None for p in tiny_model.parameters())


def test_single_channel_head_gives_closed_form_map(tiny_model, rng):
    """Testa che legge un solo canale: la mappa è ReLU(A_k) riscalata."""
    x = _image(rng)
    _, captured = forward(tiny_model, x, capture="block4")
    activations = captured.data[0].astype(np.float64)
    k = int(activations.sum(axis=(1, 2)).argmax())
    assert activations[k].sum() > 0.0

    layers = _layers(tiny_model)
    for name in ("head.dense1", "head.dense2", "head.logits"):
        layers[name].weight.data[...] = 0.0
        layers[name].bias.data[...] = 0.0
    layers["head.dense1"].weight.data[0, k] = 1.0
    layers["head.dense2"].weight.data[0, 0] = 1.0
    target = 2
    layers["head.logits"].weight.data[target, 0] = 1.0

    heatmap = compute_gradcam(tiny_model, x, target)
    assert not heatmap.is_zero

    expected = upsample_bilinear(np.maximum(activations[k], 0.0), (32, 32))
    expected /= expected.max()
    np.testing.assert_allclose(heatmap.values, expected, rtol=1e-5, atol=1e-6)


def test_zero_target_row_gives_zero_map(tiny_model, rng):
    final = _layers(tiny_model)["head.logits"]
    final.weight.data[1] = 0.0
    final.bias.data[0, 1] = 0.0
    heatmap = compute_gradcam(tiny_model, _image(rng), 1)
    assert heatmap.is_zero
    np.testing.assert_array_equal(heatmap.values, np.zeros((32, 32)))


def test_scaling_the_target_row_leaves_map_unchanged(tiny_model, rng):
    x = _image(rng)
    before = compute_gradcam(tiny_model, x, 0)
    final = _layers(tiny_model)["head.logits"]
    final.weight.data[0] *= 2.0
    final.bias.data[0, 0] *= 2.0
    after = compute_gradcam(tiny_model, x, 0)
    assert before.is_zero == after.is_zero
    np.testing.assert_allclose(after.values, before.values, atol=1e-5)

# ============================================================================
# SPIEGAZIONE DA FILE
# ============================================================================

def test_explain_image_writes_heatmap_and_overlay(tiny_model, rng, tmp_path):
    source = tmp_path / "leaf.png"
    Image.fromarray(rng.integers(0, 256, size=(48, 48, 3), dtype=np.uint8)).save(source)

    result = explain_image(tiny_model, source, tmp_path / "cam", target_class=None, layer="block3")

    assert result['target_class'] == result['predicted_class']
    assert sum(result['probabilities']) == pytest.approx(1.0, abs=1e-5)
    with Image.open(result['heatmap_path']) as heat:
        assert heat.size == (32, 32)
        assert heat.mode == "L"
    with Image.open(result['overlay_path']) as blended:
        assert blended.size == (32, 32)
        assert blended.mode == "RGB"
    assert result['overlay_path'].endswith("leaf_overlay.png")

# ============================================================================
# LOCALIZZAZIONE SU DATI SINTETICI
# ============================================================================

@pytest.mark.slow
def test_heatmap_peak_falls_in_planted_quadrant(tiny_spec, tmp_path):
    index = synth_dataset(tmp_path / "d", classes=3, per_class=40, seed=11, size=32)
    split = stratified_split(index, seed=0, fractions=(0.6, 0.2, 0.2))
    model = build_model(replace(tiny_spec, dropout_rate=0.0), seed=0)
    fit(model, index, split, TrainConfig(epochs=30, batch_size=8, lr=0.001, seed=0))

    loader = BatchLoader(index, 32, threads=1)
    assert evaluate_split(model, loader, split.train, 16).accuracy >= 0.95
    test = evaluate_split(model, loader, split.test, 16)

    correct = [p for p, pred, label in zip(split.test, test.predictions, test.labels) if pred == label]
    assert len(correct) >= len(split.test) // 2
    hits = 0
    for position in correct:
        sample = index.samples[position]
        heatmap = compute_gradcam(model, load_image(sample, 32), sample.class_index)
        assert heatmap.values.min() >= 0.0 and heatmap.values.max() <= 1.0
        row, col = np.unravel_index(int(heatmap.values.argmax()), heatmap.shape)
        rows, cols = quadrant_slices(planted_quadrant(sample.class_index), 32)
        hits += int(rows.start <= row < rows.stop and cols.start <= col < cols.stop)
    assert hits >= 0.8 * len(correct)
