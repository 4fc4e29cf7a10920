# -*- coding: utf-8 -*-
"""Confusion matrix, precision/recall/F1, AUC one-vs-rest."""

import numpy as np
import pytest
from sklearn.metrics import roc_auc_score

from config import LEAF_CLASS_NAMES
from metrics import (
    REFERENCE_CONFUSION_MATRIX,
    ConfusionMatrix,
    MetricsError,
    accuracy,
    classification_report_frame,
    confusion_matrix,
    evaluate_predictions,
    precision_recall_f1,
    roc_auc_ovr,
    roc_curves_ovr,
)

# ============================================================================
# FIXTURE A TRE CLASSI
# ============================================================================

def test_reference_matrix_per_class_metrics():
    cm = ConfusionMatrix(REFERENCE_CONFUSION_MATRIX, LEAF_CLASS_NAMES)
    metrics = precision_recall_f1(cm)
    np.testing.assert_allclose(metrics.precision, [0.9325, 0.9764, 0.9904], atol=1e-4)
    np.testing.assert_allclose(metrics.recall, [0.9981, 0.9254, 0.9012], atol=1e-4)
    np.testing.assert_allclose(metrics.f1, [0.9642, 0.9502, 0.9437], atol=1e-4)
    assert metrics.support.tolist() == [540, 134, 344]


def test_reference_matrix_averages():
    metrics = precision_recall_f1(ConfusionMatrix(REFERENCE_CONFUSION_MATRIX))
    assert metrics.accuracy == pytest.approx(973 / 1018)
    assert metrics.macro['precision'] == pytest.approx(0.9664, abs=1e-4)
    assert metrics.macro['recall'] == pytest.approx(0.9416, abs=1e-4)
    assert metrics.macro['f1'] == pytest.approx(0.9527, abs=1e-4)


def test_report_frame_has_average_rows():
    cm = ConfusionMatrix(REFERENCE_CONFUSION_MATRIX, LEAF_CLASS_NAMES)
    frame = classification_report_frame(cm, precision_recall_f1(cm)).set_index('class')
    assert list(frame.index) == LEAF_CLASS_NAMES + ["macro avg", "weighted avg"]
    assert frame.loc['weighted avg', 'support'] == 1018
    assert frame.loc['weighted avg', 'recall'] == pytest.approx(973 / 1018)

# ============================================================================
# CASI LIMITE
# ============================================================================

def test_diagonal_matrix_is_perfect():
    metrics = precision_recall_f1(ConfusionMatrix(np.diag([5, 3, 7])))
    assert metrics.accuracy == 1.0
    for values in (metrics.precision, metrics.recall, metrics.f1):
        np.testing.assert_array_equal(values, [1.0, 1.0, 1.0])


def test_empty_input_gives_zeros():
    cm = confusion_matrix([], [], 3)
    assert cm.total == 0
    metrics = precision_recall_f1(cm)
    assert metrics.accuracy is None
    for values in (metrics.precision, metrics.recall, metrics.f1):
        np.testing.assert_array_equal(values, [0.0, 0.0, 0.0])
    with pytest.raises(MetricsError):
        accuracy(cm)


def test_off_diagonal_only():
    metrics = precision_recall_f1(ConfusionMatrix(np.array([[0, 4], [6, 0]])))
    assert metrics.accuracy == 0.0
    np.testing.assert_array_equal(metrics.f1, [0.0, 0.0])


def test_confusion_matrix_counts_and_validation():
    cm = confusion_matrix([0, 0, 1, 2, 2], [0, 1, 1, 2, 0], 3)
    np.testing.assert_array_equal(cm.counts, [[1, 1, 0], [0, 1, 0], [1, 0, 1]])
    with pytest.raises(MetricsError):
        confusion_matrix([0, 1], [0], 2)
    with pytest.raises(MetricsError):
        confusion_matrix([0, 3], [0, 1], 3)


def test_f1_bounded_by_geometric_mean(rng):
    for _ in range(20):
        metrics = precision_recall_f1(ConfusionMatrix(rng.integers(0, 50, size=(4, 4))))
        assert np.all(metrics.f1 <= np.sqrt(metrics.precision * metrics.recall) + 1e-12)

# ============================================================================
# AUC
# ============================================================================

def _binary_rows(scores):
    scores = np.asarray(scores, dtype=np.float64)
    return np.stack([1.0 - scores, scores], axis=1)


def test_auc_hand_computed_case():
    rows = _binary_rows([0.9, 0.8, 0.4, 0.7, 0.3, 0.2])
    labels = [1, 1, 1, 0, 0, 0]
    aucs = roc_auc_ovr(rows, labels)
    assert aucs[1] == pytest.approx(8 / 9)
    assert aucs[0] == pytest.approx(8 / 9)


def test_constant_scores_give_half():
    rows = np.full((6, 3), 1.0 / 3.0)
    assert roc_auc_ovr(rows, [0, 1, 2, 0, 1, 2]) == [pytest.approx(0.5)] * 3


def test_auc_is_undefined_without_positives():
    rows = _binary_rows([0.1, 0.6, 0.7])
    aucs = roc_auc_ovr(rows, [0, 0, 0])
    assert aucs == [None, None]
    assert roc_curves_ovr(rows, [0, 0, 0]) == [None, None]


def test_auc_monotone_invariance(rng):
    rows = rng.random((40, 3))
    labels = rng.integers(0, 3, size=40)
    np.testing.assert_allclose(roc_auc_ovr(rows, labels), roc_auc_ovr(rows ** 3, labels))


def test_auc_permutation_equivariance(rng):
    rows = rng.random((30, 3))
    labels = rng.integers(0, 3, size=30)
    order = rng.permutation(30)
    np.testing.assert_allclose(roc_auc_ovr(rows, labels), roc_auc_ovr(rows[order], labels[order]))


def test_auc_agrees_with_sklearn(rng):
    rows = rng.random((50, 3))
    labels = rng.integers(0, 3, size=50)
    aucs = roc_auc_ovr(rows, labels)
    for c in range(3):
        assert aucs[c] == pytest.approx(roc_auc_score(labels == c, rows[:, c]))


def test_roc_curve_endpoints(rng):
    rows = rng.random((20, 2))
    curves = roc_curves_ovr(rows, [0, 1] * 10)
    for curve in curves:
        assert curve['fpr'][0] == 0.0 and curve['tpr'][0] == 0.0
        assert curve['fpr'][-1] == 1.0 and curve['tpr'][-1] == 1.0

# ============================================================================
# PIPELINE
# ============================================================================

def test_evaluate_predictions_report_structure():
    probs = np.array([
        [0.8, 0.1, 0.1],
        [0.2, 0.7, 0.1],
        [0.1, 0.2, 0.7],
        [0.4, 0.4, 0.2],
    ])
    evaluation = evaluate_predictions(probs, [0, 1, 2, 1], ["a", "b", "c"])
    report = evaluation['report']
    assert report['accuracy'] == pytest.approx(0.75)
    # pareggio 0.4/0.4 → indice più basso
    assert report['confusion_matrix'] == [[1, 0, 0], [1, 1, 0], [0, 0, 1]]
    assert [entry['name'] for entry in report['per_class']] == ["a", "b", "c"]
    assert set(report['macro']) == {"precision", "recall", "f1"}
    assert len(evaluation['roc_curves']) == 3
