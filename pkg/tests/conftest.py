# -*- coding: utf-8 -*-
"""
Fixture condivise: ModelSpec ridotta (input 32x32), modello inizializzato,
dataset sintetico su disco.
"""

import numpy as np
import pytest

from data_pipeline import synth_dataset
from model_assembly import BlockSpec, ModelSpec, build_model
from tensor_autodiff import Tensor, no_grad


TINY_SIZE = 32


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_spec():
    return ModelSpec(
        input_size=TINY_SIZE,
        blocks=(BlockSpec(8, 3), BlockSpec(8, 3), BlockSpec(16, 3), BlockSpec(16, 3)),
        head_units=(16, 8),
        num_classes=3,
        reduction_ratio=4,
        dropout_rate=0.5,
        dropout_after=(True, True),
    )


def warm_up(model, seed=0):
    """Un forward in train per rendere disponibili le running stats, poi modo infer."""
    batch = np.random.default_rng(seed).random((4, 3, TINY_SIZE, TINY_SIZE)).astype(np.float32)
    model.set_mode("train")
    with no_grad():
        model(Tensor(batch))
    model.set_mode("infer")
    return model


@pytest.fixture
def warm():
    return warm_up


@pytest.fixture
def tiny_model(tiny_spec):
    return warm_up(build_model(tiny_spec, seed=7))


@pytest.fixture
def synth_root(tmp_path):
    root = tmp_path / "leaves"
    synth_dataset(root, classes=3, per_class=10, seed=3, size=TINY_SIZE)
    return root
