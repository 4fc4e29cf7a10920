# -*- coding: utf-8 -*-
"""Report JSON/HTML e grafici Plotly."""

import json

import numpy as np
import pandas as pd
import pytest
from jsonschema import validate

from chart_generator import (
    create_confusion_matrix_chart,
    create_history_chart,
    create_roc_chart,
    generate_charts_html,
)
from metrics import evaluate_predictions
from report_generator import (
    METRICS_SCHEMA,
    ReportError,
    clean_dict_for_json,
    generate_html_report,
    generate_metrics_json,
    load_metrics_json,
    save_html_report,
    save_metrics_json,
)

CLASS_NAMES = ["Healthy Leaf", "Leaf Rot", "Leaf Spot"]


@pytest.fixture
def evaluation():
    probs = np.array([
        [0.8, 0.1, 0.1],
        [0.6, 0.3, 0.1],
        [0.2, 0.7, 0.1],
        [0.1, 0.3, 0.6],
        [0.3, 0.2, 0.5],
        [0.5, 0.1, 0.4],
    ])
    return evaluate_predictions(probs, [0, 0, 1, 2, 2, 2], CLASS_NAMES)


@pytest.fixture
def history():
    return pd.DataFrame({
        'epoch': [1, 2, 3],
        'train_loss': [1.1, 0.8, 0.6],
        'train_acc': [0.4, 0.6, 0.7],
        'val_loss': [1.0, 0.9, 0.7],
        'val_acc': [0.5, 0.55, 0.65],
    })

# ============================================================================
# JSON
# ============================================================================

def test_metrics_json_round_trip(evaluation, tmp_path):
    text = generate_metrics_json(evaluation['report'], extra={'split': 'test'})
    assert text.endswith("\n")

    path = tmp_path / "out" / "metrics.json"
    save_metrics_json(text, path)
    loaded = load_metrics_json(path)
    validate(instance=loaded, schema=METRICS_SCHEMA)
    assert loaded['split'] == 'test'
    assert loaded['accuracy'] == pytest.approx(5 / 6)
    assert [c['name'] for c in loaded['per_class']] == CLASS_NAMES
    assert loaded['confusion_matrix'] == evaluation['report']['confusion_matrix']


def test_metrics_json_is_deterministic(evaluation):
    assert generate_metrics_json(evaluation['report']) == generate_metrics_json(evaluation['report'])


def test_out_of_range_accuracy_is_rejected(evaluation):
    report = {**evaluation['report'], 'accuracy': 2.0}
    with pytest.raises(ReportError):
        generate_metrics_json(report)


def test_missing_auc_serializes_as_null(evaluation):
    report = json.loads(json.dumps(clean_dict_for_json(evaluation['report'])))
    report['per_class'][1]['auc'] = None
    loaded = json.loads(generate_metrics_json(report))
    assert loaded['per_class'][1]['auc'] is None


def test_clean_dict_converts_numpy_and_nan():
    cleaned = clean_dict_for_json({
        'a': np.int64(3),
        'b': np.float32(0.5),
        'c': float('nan'),
        'd': np.array([1, 2]),
        'e': (np.bool_(True), np.float64('nan')),
    })
    assert cleaned == {'a': 3, 'b': 0.5, 'c': None, 'd': [1, 2], 'e': [True, None]}
    assert type(cleaned['a']) is int

# ============================================================================
# HTML
# ============================================================================

def test_html_report_is_deterministic_and_complete(evaluation, history, tmp_path):
    first = generate_html_report(evaluation, title="test split", history=history, parameter_summary="total: 10")
    second = generate_html_report(evaluation, title="test split", history=history, parameter_summary="total: 10")
    assert first == second

    for text in CLASS_NAMES + ["macro avg", "weighted avg", "test split", "total: 10"]:
        assert text in first
    for key in ("confusion_matrix", "roc", "history"):
        assert f'id="chart-{key}"' in first

    path = save_html_report(first, tmp_path / "report" / "report.html")
    assert (tmp_path / "report" / "report.html").read_text(encoding='utf-8') == first
    assert path.endswith("report.html")


def test_html_report_without_history(evaluation):
    html = generate_html_report(evaluation)
    assert 'id="chart-history"' not in html
    assert 'id="chart-confusion_matrix"' in html

# ============================================================================
# GRAFICI
# ============================================================================

def test_confusion_matrix_chart_uses_counts():
    counts = np.array([[5, 1], [0, 4]])
    fig = create_confusion_matrix_chart(counts, ["a", "b"])
    heat = fig.data[0]
    assert np.asarray(heat.z).tolist() == counts.tolist()
    assert list(heat.x) == ["a", "b"]


def test_roc_chart_skips_undefined_curves(evaluation):
    curves = list(evaluation['roc_curves'])
    curves[1] = None
    fig = create_roc_chart(curves, CLASS_NAMES, evaluation['aucs'])
    names = " ".join(trace.name or "" for trace in fig.data)
    assert "Healthy Leaf" in names and "Leaf Spot" in names
    assert "Leaf Rot" not in names


def test_history_chart(history):
    fig = create_history_chart(history)
    assert len(fig.data) == 4
    assert len(create_history_chart(pd.DataFrame()).data) == 0


def test_charts_html_div_ids(history):
    html = generate_charts_html({'history': create_history_chart(history)})
    assert 'id="chart-history"' in html['history']
