# -*- coding: utf-8 -*-
"""Assemblaggio del modello, conteggio parametri, checkpoint CBLF."""

import numpy as np
import pytest

from config import CONFIG
from model_assembly import (
    BadMagicError,
    BlockSpec,
    CheckpointError,
    InputShapeError,
    ModelSpec,
    ModelSpecError,
    TruncatedPayloadError,
    VersionMismatchError,
    architecture_recipe,
    build_model,
    count_parameters,
    expected_recipe,
    forward,
    load_checkpoint,
    read_checkpoint_header,
    save_checkpoint,
)
from nn_layers import softmax
from tensor_autodiff import Tensor, no_grad
from utils import hash_arrays


def _state_hash(model):
    return hash_arrays(t.data for t in model.named_tensors())


def _batch(rng, n=3, size=32):
    return Tensor(rng.random((n, 3, size, size)).astype(np.float32))

# ============================================================================
# COSTRUZIONE
# ============================================================================

def test_same_seed_builds_identical_models(tiny_spec):
    assert _state_hash(build_model(tiny_spec, seed=1)) == _state_hash(build_model(tiny_spec, seed=1))
    assert _state_hash(build_model(tiny_spec, seed=1)) != _state_hash(build_model(tiny_spec, seed=2))


def test_recipe_matches_spec(tiny_spec):
    model = build_model(tiny_spec)
    assert architecture_recipe(model) == expected_recipe(tiny_spec)
    assert architecture_recipe(model).count("cbam") == 4
    assert architecture_recipe(model).count("dropout") == 2


def test_logits_shape(tiny_model, rng):
    with no_grad():
        logits = tiny_model(_batch(rng))
    assert logits.shape == (3, 3, 1, 1)


def test_wrong_input_shape_is_rejected(tiny_model):
    with pytest.raises(InputShapeError):
        tiny_model(Tensor(np.zeros((1, 3, 64, 64))))


@pytest.mark.parametrize("changes", [
    {"reduction_ratio": 3},
    {"input_size": 40},
    {"num_classes": 1},
    {"blocks": (BlockSpec(8, 3),) * 3},
    {"blocks": (BlockSpec(8, 4),) * 4},
    {"dropout_after": (True,)},
])
def test_invalid_specs_are_rejected(tiny_spec, changes):
    fields = {**tiny_spec.to_dict(), **changes}
    spec = ModelSpec(
        input_size=fields['input_size'],
        blocks=tuple(b if isinstance(b, BlockSpec) else BlockSpec(*b) for b in fields['blocks']),
        head_units=tuple(fields['head_units']),
        num_classes=fields['num_classes'],
        reduction_ratio=fields['reduction_ratio'],
        dropout_rate=fields['dropout_rate'],
        dropout_after=tuple(fields['dropout_after']),
    )
    with pytest.raises(ModelSpecError):
        build_model(spec)


def test_zeroed_classifier_gives_uniform_probabilities(tiny_model, rng):
    final = tiny_model.layers[-1]
    final.weight.data[...] = 0.0
    final.bias.data[...] = 0.0
    with no_grad():
        probs = softmax(tiny_model(_batch(rng))).matrix_view()
    np.testing.assert_allclose(probs, np.full((3, 3), 1.0 / 3.0), rtol=1e-6)

# ============================================================================
# INFERENZA
# ============================================================================

def test_infer_is_batch_independent(tiny_model, rng):
    x = _batch(rng, n=3)
    with no_grad():
        together = tiny_model(x).matrix_view()
        alone = np.concatenate([tiny_model(Tensor(x.data[i:i + 1])).matrix_view() for i in range(3)])
    np.testing.assert_allclose(together, alone, atol=1e-5)


def test_infer_is_deterministic_and_pure(tiny_model, rng):
    x = _batch(rng, n=2)
    before = _state_hash(tiny_model)
    with no_grad():
        first = tiny_model(x).data.copy()
        second = tiny_model(x).data.copy()
    np.testing.assert_array_equal(first, second)
    assert _state_hash(tiny_model) == before


def test_capture_returns_block_output(tiny_model, rng):
    logits, captured = forward(tiny_model, _batch(rng, n=1), capture="block4")
    assert captured.shape == (1, 16, 4, 4)
    assert logits.shape == (1, 3, 1, 1)
    with pytest.raises(KeyError):
        forward(tiny_model, _batch(rng, n=1), capture="block9")

# ============================================================================
# CONTEGGIO PARAMETRI
# ============================================================================

def test_default_architecture_parameter_count():
    counts = count_parameters(build_model(ModelSpec()))
    assert counts.trainable == 2_128_523
    assert counts.buffers == 1_920
    assert counts.total == 2_130_443
    assert counts.bytes == 8_521_772
    assert counts.mib == pytest.approx(8.127, abs=1e-3)
    assert counts.mib == pytest.approx(CONFIG['REFERENCE_SIZE_MIB'], rel=0.01)
    assert counts.total == pytest.approx(CONFIG['REFERENCE_PARAM_COUNT'], rel=0.005)

    table = counts.table.set_index('layer')
    assert table.loc['block1.conv1', 'trainable'] == 4_704
    assert table.loc['head.dense1', 'trainable'] == 256 * 1024 + 1024
    assert table['total'].sum() == counts.total


def test_reduction_ratio_changes_attention_parameters():
    counts = count_parameters(build_model(ModelSpec(reduction_ratio=16)))
    assert counts.total == 2_119_533


def test_parameter_table_has_output_shapes(tiny_model):
    table = count_parameters(tiny_model).table.set_index('layer')
    assert table.loc['block1.pool', 'output_shape'] == "8x16x16"
    assert table.loc['head.gap', 'output_shape'] == "16"
    assert table.loc['head.logits', 'output_shape'] == "3"

# ============================================================================
# CHECKPOINT
# ============================================================================

def test_checkpoint_round_trip_is_bit_exact(tiny_model, rng, tmp_path):
    path = tmp_path / "model.cblf"
    size = save_checkpoint(tiny_model, path, metadata={'class_names': ['a', 'b', 'c']})
    assert path.stat().st_size == size

    restored = load_checkpoint(path)
    assert _state_hash(restored) == _state_hash(tiny_model)
    assert restored.spec == tiny_model.spec
    assert restored.metadata['class_names'] == ['a', 'b', 'c']
    assert restored.mode == "infer"

    x = _batch(rng, n=2)
    with no_grad():
        np.testing.assert_array_equal(restored(x).data, tiny_model(x).data)


def test_checkpoint_bytes_are_reproducible(tiny_model, tmp_path):
    save_checkpoint(tiny_model, tmp_path / "a.cblf")
    save_checkpoint(tiny_model, tmp_path / "b.cblf")
    assert (tmp_path / "a.cblf").read_bytes() == (tmp_path / "b.cblf").read_bytes()


def test_checkpoint_header_records_spec(tiny_model, tmp_path):
    path = tmp_path / "model.cblf"
    save_checkpoint(tiny_model, path)
    header = read_checkpoint_header(path)
    assert header['spec']['reduction_ratio'] == 4
    assert header['spec']['mlp_bias'] is True
    names = [t['name'] for t in header['tensors']]
    assert 'block1.bn1.running_mean' in names
    assert len(names) == len(tiny_model.registry)


def test_bad_magic_is_rejected(tiny_model, tmp_path):
    path = tmp_path / "model.cblf"
    save_checkpoint(tiny_model, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"XXXX"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        load_checkpoint(path)


def test_unknown_version_is_rejected(tiny_model, tmp_path):
    path = tmp_path / "model.cblf"
    save_checkpoint(tiny_model, path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = (99).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatchError):
        load_checkpoint(path)


def test_truncated_payload_is_rejected(tiny_model, tmp_path):
    path = tmp_path / "model.cblf"
    save_checkpoint(tiny_model, path)
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(TruncatedPayloadError):
        load_checkpoint(path)


def test_checkpoint_errors_share_a_base(tiny_model, tmp_path):
    path = tmp_path / "empty.cblf"
    path.write_bytes(b"")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
