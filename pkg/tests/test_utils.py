# -*- coding: utf-8 -*-
"""Helper di formattazione, digest e configurazione."""

import copy
import logging

import numpy as np

import config
from config import CONFIG, get_log_level, get_thread_count, validate_config
from utils import (
    ensure_parent_dir,
    format_bytes,
    format_large_number,
    format_number,
    format_percentage,
    hash_arrays,
)


def test_number_formatting():
    assert format_number(2128523) == "2,128,523"
    assert format_number(0.95579, 4) == "0.9558"
    assert format_number(None) == "N/A"
    assert format_number(float('nan')) == "N/A"
    assert format_large_number(2128523) == "2.13M"
    assert format_large_number(-1500) == "-1.50K"


def test_percentage_and_bytes():
    assert format_percentage(0.9558) == "95.58%"
    assert format_percentage(None) == "N/A"
    assert format_bytes(8521772) == "8.13 MiB"
    assert format_bytes(512) == "512.00 B"


def test_hash_arrays_sees_shape_and_dtype():
    a = np.zeros(4, dtype=np.float32)
    assert hash_arrays([a]) == hash_arrays([a.copy()])
    assert hash_arrays([a]) != hash_arrays([a.reshape(2, 2)])
    assert hash_arrays([a]) != hash_arrays([a.astype(np.float64)])


def test_ensure_parent_dir(tmp_path):
    target = tmp_path / "a" / "b" / "file.txt"
    ensure_parent_dir(target)
    assert target.parent.is_dir()


def test_default_config_is_valid():
    assert validate_config()


def test_invalid_config_is_reported(caplog):
    broken = copy.deepcopy(CONFIG)
    broken['BLOCKS'] = [(32, 4), (64, 5), (128, 3)]
    broken['SPLIT_FRACTIONS'] = (0.5, 0.5, 0.5)
    with caplog.at_level(logging.ERROR):
        assert not validate_config(broken)
    assert "BLOCKS" in caplog.text
    assert "SPLIT_FRACTIONS" in caplog.text


def test_thread_count_priority(monkeypatch):
    monkeypatch.setitem(config.ENVIRONMENT, 'CBAMNET_THREADS', '3')
    assert get_thread_count(5) == 5
    assert get_thread_count() == 3
    monkeypatch.setitem(config.ENVIRONMENT, 'CBAMNET_THREADS', 'many')
    assert get_thread_count() >= 1
    assert get_thread_count(0) == 1


def test_log_level_priority(monkeypatch):
    monkeypatch.setitem(config.ENVIRONMENT, 'CBAMNET_LOG_LEVEL', 'warning')
    assert get_log_level() == logging.WARNING
    assert get_log_level("DEBUG") == logging.DEBUG
