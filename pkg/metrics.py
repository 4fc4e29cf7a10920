# -*- coding: utf-8 -*-
"""
============================================================================
CBAMNET - Leaf Disease Classification Engine
Metrics Module
============================================================================
Metriche di valutazione:
- Confusion matrix K x K (righe = classe vera, colonne = predetta)
- Precision / Recall / F1 per classe, media macro (non pesata)
- Accuracy = traccia / totale
- ROC-AUC one-vs-rest con statistica dei ranghi (pareggi a metà credito)
- Punti delle curve ROC per i grafici
============================================================================
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata
from sklearn.metrics import confusion_matrix as sk_confusion_matrix
from sklearn.metrics import roc_curve

logger = logging.getLogger(__name__)

# ============================================================================
# ERRORI
# ============================================================================

class MetricsError(ValueError):
    """Input non valido per il calcolo delle metriche."""

# ============================================================================
# FIXTURE DI RIFERIMENTO
# ============================================================================

# Test set del dataset a 3 classi (Healthy Leaf, Leaf Rot, Leaf Spot):
# 973 corretti su 1018 → accuracy 0.9558
REFERENCE_CONFUSION_MATRIX = np.array([
    [539, 0, 1],
    [8, 124, 2],
    [31, 3, 310],
], dtype=np.int64)

# ============================================================================
# TIPI
# ============================================================================

@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2 or self.counts.shape[0] != self.counts.shape[1]:
            raise MetricsError(f"Confusion matrix non quadrata: {self.counts.shape}")
        if np.any(self.counts < 0):
            raise MetricsError("Confusion matrix con conteggi negativi")
        if not self.class_names:
            self.class_names = [f"class_{i}" for i in range(self.num_classes)]

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.counts, index=self.class_names, columns=self.class_names)


@dataclass
class ClassMetrics:
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    accuracy: Optional[float]

    @property
    def macro(self) -> Dict[str, float]:
        return {
            'precision': float(np.mean(self.precision)),
            'recall': float(np.mean(self.recall)),
            'f1': float(np.mean(self.f1)),
        }

    @property
    def weighted(self) -> Dict[str, float]:
        total = self.support.sum()
        if total == 0:
            return {'precision': 0.0, 'recall': 0.0, 'f1': 0.0}
        weights = self.support / total
        return {
            'precision': float(np.dot(weights, self.precision)),
            'recall': float(np.dot(weights, self.recall)),
            'f1': float(np.dot(weights, self.f1)),
        }

# ============================================================================
# CONFUSION MATRIX / ACCURACY
# ============================================================================

def confusion_matrix(
    true_labels: Sequence[int],
    predicted_labels: Sequence[int],
    num_classes: int,
    class_names: Optional[List[str]] = None
) -> ConfusionMatrix:
    """
    Raises:
        MetricsError: lunghezze diverse o etichette fuori da [0, K)
    """
    true_arr = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    pred_arr = np.asarray(predicted_labels, dtype=np.int64).reshape(-1)

    if true_arr.shape != pred_arr.shape:
        raise MetricsError(f"Lunghezze diverse: {true_arr.size} etichette vere, {pred_arr.size} predette")
    for name, arr in (("vere", true_arr), ("predette", pred_arr)):
        if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
            raise MetricsError(f"Etichette {name} fuori da [0, {num_classes}): {arr.min()}..{arr.max()}")

    if true_arr.size == 0:
        counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    else:
        counts = sk_confusion_matrix(true_arr, pred_arr, labels=list(range(num_classes)))

    return ConfusionMatrix(counts, list(class_names) if class_names else [])


def accuracy(cm: ConfusionMatrix) -> float:
    """
    Raises:
        MetricsError: matrice vuota
    """
    if cm.total == 0:
        raise MetricsError("Accuracy non definita su una confusion matrix vuota")
    return float(np.trace(cm.counts) / cm.total)

# ============================================================================
# PRECISION / RECALL / F1
# ============================================================================

def _safe_divide(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    numerator = numerator.astype(np.float64)
    denominator = denominator.astype(np.float64)
    out = np.zeros_like(numerator)
    np.divide(numerator, denominator, out=out, where=denominator > 0)
    return out


def precision_recall_f1(cm: ConfusionMatrix) -> ClassMetrics:
    """
    Per classe c: P = cm[c,c] / somma colonna, R = cm[c,c] / somma riga,
    F1 = 2PR / (P+R). Denominatori nulli → 0.
    """
    diagonal = np.diag(cm.counts)
    precision = _safe_divide(diagonal, cm.counts.sum(axis=0))
    recall = _safe_divide(diagonal, cm.counts.sum(axis=1))
    f1 = _safe_divide(2.0 * precision * recall, precision + recall)

    return ClassMetrics(
        precision=precision,
        recall=recall,
        f1=f1,
        support=cm.counts.sum(axis=1).astype(np.int64),
        accuracy=accuracy(cm) if cm.total else None,
    )

# ============================================================================
# ROC / AUC
# ============================================================================

def _validate_scores(probability_rows: np.ndarray, true_labels: np.ndarray) -> None:
    if probability_rows.ndim != 2:
        raise MetricsError(f"Attese righe di probabilità (N, K), shape {probability_rows.shape}")
    if probability_rows.shape[0] != true_labels.size:
        raise MetricsError(
            f"Righe di probabilità ({probability_rows.shape[0]}) e etichette ({true_labels.size}) in numero diverso"
        )
    k = probability_rows.shape[1]
    if true_labels.size and (true_labels.min() < 0 or true_labels.max() >= k):
        raise MetricsError(f"Etichette fuori da [0, {k})")


def roc_auc_ovr(probability_rows: np.ndarray, true_labels: Sequence[int]) -> List[Optional[float]]:
    """
    AUC one-vs-rest per classe con la statistica di Mann-Whitney
    (ranghi medi: i pareggi valgono metà).

    Returns:
        Lista di K valori; None se la classe non ha positivi o negativi
    """
    scores = np.asarray(probability_rows, dtype=np.float64)
    labels = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    _validate_scores(scores, labels)

    aucs: List[Optional[float]] = []
    for c in range(scores.shape[1]):
        positive = labels == c
        n_pos = int(positive.sum())
        n_neg = int(labels.size - n_pos)
        if n_pos == 0 or n_neg == 0:
            aucs.append(None)
            continue
        ranks = rankdata(scores[:, c])
        u_statistic = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
        aucs.append(float(u_statistic / (n_pos * n_neg)))
    return aucs


def roc_curves_ovr(probability_rows: np.ndarray, true_labels: Sequence[int]) -> List[Optional[Dict[str, np.ndarray]]]:
    """Punti (fpr, tpr) one-vs-rest per classe, None se la curva non è definita."""
    scores = np.asarray(probability_rows, dtype=np.float64)
    labels = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    _validate_scores(scores, labels)

    curves: List[Optional[Dict[str, np.ndarray]]] = []
    for c in range(scores.shape[1]):
        positive = (labels == c).astype(np.int64)
        if positive.sum() == 0 or positive.sum() == positive.size:
            curves.append(None)
            continue
        fpr, tpr, _ = roc_curve(positive, scores[:, c])
        curves.append({'fpr': fpr, 'tpr': tpr})
    return curves

# ============================================================================
# REPORT
# ============================================================================

def build_metrics_report(
    cm: ConfusionMatrix,
    class_metrics: ClassMetrics,
    aucs: Sequence[Optional[float]]
) -> Dict[str, Any]:
    """
    Dizionario del report: accuracy, confusion_matrix,
    per_class[{name, precision, recall, f1, support, auc}], macro{precision, recall, f1}.
    """
    per_class = [
        {
            'name': cm.class_names[c],
            'precision': float(class_metrics.precision[c]),
            'recall': float(class_metrics.recall[c]),
            'f1': float(class_metrics.f1[c]),
            'support': int(class_metrics.support[c]),
            'auc': aucs[c],
        }
        for c in range(cm.num_classes)
    ]
    return {
        'accuracy': class_metrics.accuracy,
        'confusion_matrix': cm.counts.tolist(),
        'per_class': per_class,
        'macro': class_metrics.macro,
    }


def classification_report_frame(cm: ConfusionMatrix, class_metrics: ClassMetrics) -> pd.DataFrame:
    """Tabella per classe + righe "macro avg" e "weighted avg"."""
    rows = [
        {
            'class': name,
            'precision': class_metrics.precision[c],
            'recall': class_metrics.recall[c],
            'f1': class_metrics.f1[c],
            'support': int(class_metrics.support[c]),
        }
        for c, name in enumerate(cm.class_names)
    ]
    total_support = int(class_metrics.support.sum())
    for label, averages in (("macro avg", class_metrics.macro), ("weighted avg", class_metrics.weighted)):
        rows.append({'class': label, **averages, 'support': total_support})
    return pd.DataFrame(rows, columns=['class', 'precision', 'recall', 'f1', 'support'])


def evaluate_predictions(
    probability_rows: np.ndarray,
    true_labels: Sequence[int],
    class_names: List[str]
) -> Dict[str, Any]:
    """
    Pipeline completa: argmax (pareggi al primo indice) → confusion matrix →
    P/R/F1 → AUC. Ritorna il report serializzabile più gli oggetti intermedi.
    """
    scores = np.asarray(probability_rows, dtype=np.float64)
    labels = np.asarray(true_labels, dtype=np.int64)
    cm = confusion_matrix(labels, scores.argmax(axis=1), len(class_names), class_names)
    class_metrics = precision_recall_f1(cm)
    aucs = roc_auc_ovr(scores, labels)

    acc_text = f"{class_metrics.accuracy:.4f}" if class_metrics.accuracy is not None else "n/a"
    logger.info(f"📊 Valutazione: {cm.total} campioni, accuracy {acc_text}, macro F1 {class_metrics.macro['f1']:.4f}")
    return {
        'report': build_metrics_report(cm, class_metrics, aucs),
        'confusion_matrix': cm,
        'class_metrics': class_metrics,
        'aucs': aucs,
        'roc_curves': roc_curves_ovr(scores, labels),
    }
