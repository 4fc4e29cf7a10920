# -*- coding: utf-8 -*-
"""
============================================================================
CBAMNET - Leaf Disease Classification Engine
Report Generator Module
============================================================================
Genera i report di valutazione in formato:
- JSON strutturato (metrics.json, validato contro METRICS_SCHEMA)
- HTML (jinja2) con distribuzione classi, classification report,
  tabella parametri e grafici Plotly

Nessun timestamp nel contenuto: a parità di seed l'output è identico byte per byte.
============================================================================
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import pandas as pd
from jinja2 import Template
from jsonschema import ValidationError, validate

from config import CONFIG
from chart_generator import (
    create_confusion_matrix_chart,
    create_history_chart,
    create_roc_chart,
    generate_charts_html,
)
from utils import ensure_parent_dir, format_percentage

# ============================================================================
# LOGGING
# ============================================================================

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# ============================================================================
# JSON SERIALIZATION HELPERS
# ============================================================================

def convert_types(obj):
    """
    Converte tipi numpy/pandas in tipi nativi Python per JSON serialization.

    Args:
        obj: Oggetto da convertire

    Returns:
        Oggetto convertito
    """
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        value = float(obj)
        return None if np.isnan(value) else value
    if isinstance(obj, float) and np.isnan(obj):
        return None
    if isinstance(obj, np.ndarray):
        return clean_dict_for_json(obj.tolist())
    if isinstance(obj, pd.DataFrame):
        return clean_dict_for_json(obj.to_dict('records'))
    if isinstance(obj, (tuple, Path)):
        return clean_dict_for_json(list(obj)) if isinstance(obj, tuple) else str(obj)
    return obj


def clean_dict_for_json(data: Any) -> Any:
    """
    Pulisce ricorsivamente strutture dati per JSON serialization.

    Args:
        data: Dict, List o valore da pulire

    Returns:
        Struttura pulita con tipi nativi
    """
    if isinstance(data, dict):
        return {str(k): clean_dict_for_json(v) for k, v in data.items()}
    if isinstance(data, list):
        return [clean_dict_for_json(item) for item in data]
    return convert_types(data)

# ============================================================================
# SCHEMA METRICS JSON
# ============================================================================

_RATIO = {"type": "number", "minimum": 0.0, "maximum": 1.0}

METRICS_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["accuracy", "confusion_matrix", "per_class", "macro"],
    "properties": {
        "accuracy": {"type": ["number", "null"], "minimum": 0.0, "maximum": 1.0},
        "confusion_matrix": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer", "minimum": 0}},
        },
        "per_class": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "precision", "recall", "f1", "support", "auc"],
                "properties": {
                    "name": {"type": "string"},
                    "precision": _RATIO,
                    "recall": _RATIO,
                    "f1": _RATIO,
                    "support": {"type": "integer", "minimum": 0},
                    "auc": {"type": ["number", "null"], "minimum": 0.0, "maximum": 1.0},
                },
            },
        },
        "macro": {
            "type": "object",
            "required": ["precision", "recall", "f1"],
            "properties": {"precision": _RATIO, "recall": _RATIO, "f1": _RATIO},
        },
    },
}


class ReportError(ValueError):
    """Report metriche non conforme a METRICS_SCHEMA."""

# ============================================================================
# JSON REPORT GENERATION
# ============================================================================

def generate_metrics_json(report: Dict[str, Any], extra: Optional[Dict[str, Any]] = None) -> str:
    """
    Serializza il report metriche (formato del modulo metrics) in JSON.

    Args:
        report: dict da metrics.build_metrics_report
        extra: chiavi aggiuntive (es. split, checkpoint) affiancate al report

    Raises:
        ReportError: report non conforme allo schema
    """
    clean = clean_dict_for_json({**report, **(extra or {})})
    try:
        validate(instance=clean, schema=METRICS_SCHEMA)
    except ValidationError as e:
        raise ReportError(f"Metrics JSON non valido: {e.message}") from e

    json_string = json.dumps(clean, indent=CONFIG['JSON_INDENT'], ensure_ascii=False, sort_keys=False)
    logger.debug(f"JSON metriche generato: {len(json_string)} caratteri")
    return json_string + "\n"


def save_metrics_json(json_string: str, filepath: PathLike) -> str:
    """Salva il JSON metriche su file."""
    ensure_parent_dir(filepath)
    with open(filepath, 'w', encoding='utf-8') as f:
        f.write(json_string)
    logger.info(f"💾 JSON salvato: {filepath}")
    return str(filepath)


def load_metrics_json(filepath: PathLike) -> Dict[str, Any]:
    with open(filepath, 'r', encoding='utf-8') as f:
        return json.load(f)

# ============================================================================
# HTML TEMPLATE
# ============================================================================

HTML_TEMPLATE = """<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <meta name="viewport" content="width=device-width, initial-scale=1.0">
    <title>CBAMNET | {{ title }}</title>
    <script src="https://cdn.plot.ly/plotly-2.27.0.min.js"></script>
    <style>
        :root {
            --primary: {{ colors.PRIMARY[0] }};
            --secondary: {{ colors.PRIMARY[1] }};
            --accent: {{ colors.ACCENT_GREEN }};
            --danger: {{ colors.ACCENT_RED }};
            --bg: {{ colors.BG }};
            --card-bg: {{ colors.CARD_BG }};
        }
        * { margin: 0; padding: 0; box-sizing: border-box; }
        body { font-family: sans-serif; background: var(--bg); color: var(--secondary); line-height: 1.6; }
        .container { max-width: 1200px; margin: 0 auto; padding: 20px; }
        header { background: linear-gradient(135deg, var(--primary) 0%, var(--secondary) 100%); color: white; padding: 30px 0; margin-bottom: 30px; }
        h1 { font-size: 2rem; font-weight: 800; }
        h2 { color: var(--primary); font-size: 1.4rem; margin-bottom: 16px; border-bottom: 3px solid var(--accent); padding-bottom: 8px; }
        .meta { font-size: 0.85rem; opacity: 0.8; }
        section { background: var(--card-bg); border-radius: 12px; padding: 25px; margin-bottom: 25px; box-shadow: 0 2px 8px rgba(0,0,0,0.08); }
        .metric-panel { display: grid; grid-template-columns: repeat(auto-fit, minmax(200px, 1fr)); gap: 20px; }
        .metric-card { background: #f8f9fa; padding: 20px; border-radius: 8px; text-align: center; }
        .metric-label { font-size: 0.9rem; font-weight: 600; margin-bottom: 8px; }
        .metric-val { font-size: 2rem; font-weight: 800; color: var(--primary); }
        table { width: 100%; border-collapse: collapse; margin-top: 10px; }
        th { background: var(--primary); color: white; padding: 10px; text-align: left; font-size: 0.85rem; }
        td { padding: 8px 10px; border-bottom: 1px solid #e9ecef; }
        tr.summary td { font-weight: 700; background: #f8f9fa; }
    </style>
</head>
<body>
<header>
    <div class="container">
        <h1>CBAMNET</h1>
        <div class="meta">{{ title }}</div>
    </div>
</header>
<div class="container">
    <section>
        <h2>Summary</h2>
        <div class="metric-panel">
            <div class="metric-card">
                <div class="metric-label">Accuracy</div>
                <div class="metric-val">{{ accuracy_text }}</div>
            </div>
            <div class="metric-card">
                <div class="metric-label">Macro Precision</div>
                <div class="metric-val">{{ "%.4f"|format(report.macro.precision) }}</div>
            </div>
            <div class="metric-card">
                <div class="metric-label">Macro Recall</div>
                <div class="metric-val">{{ "%.4f"|format(report.macro.recall) }}</div>
            </div>
            <div class="metric-card">
                <div class="metric-label">Macro F1</div>
                <div class="metric-val">{{ "%.4f"|format(report.macro.f1) }}</div>
            </div>
        </div>
    </section>

    <section>
        <h2>Classification Report</h2>
        <table>
            <tr><th>Class</th><th>Precision</th><th>Recall</th><th>F1</th><th>Support</th><th>AUC</th></tr>
            {% for row in classification_rows %}
            <tr class="{{ 'summary' if row.summary else '' }}">
                <td>{{ row['class'] }}</td>
                <td>{{ "%.4f"|format(row.precision) }}</td>
                <td>{{ "%.4f"|format(row.recall) }}</td>
                <td>{{ "%.4f"|format(row.f1) }}</td>
                <td>{{ row.support }}</td>
                <td>{{ row.auc }}</td>
            </tr>
            {% endfor %}
        </table>
    </section>

    {% if distribution_rows %}
    <section>
        <h2>Dataset Distribution</h2>
        <table>
            <tr><th>Class</th><th>Images</th><th>Augmented</th></tr>
            {% for row in distribution_rows %}
            <tr><td>{{ row['class'] }}</td><td>{{ row.images }}</td><td>{{ row.augmented }}</td></tr>
            {% endfor %}
        </table>
    </section>
    {% endif %}

    {% if parameter_summary %}
    <section>
        <h2>Model</h2>
        <p>{{ parameter_summary }}</p>
    </section>
    {% endif %}

    {% for key, title in chart_titles %}
    {% if charts.get(key) %}
    <section>
        <h2>{{ title }}</h2>
        <div>{{ charts[key] | safe }}</div>
    </section>
    {% endif %}
    {% endfor %}

    <footer style="text-align: center; padding: 40px; color: #a0aec0; font-size: 0.8rem;">
        <p>Generated by CBAMNET evaluate</p>
    </footer>
</div>
</body>
</html>
"""

CHART_TITLES = [
    ("confusion_matrix", "Confusion Matrix"),
    ("roc", "ROC Curves (one-vs-rest)"),
    ("history", "Training History"),
]

# ============================================================================
# HTML REPORT GENERATION
# ============================================================================

def _classification_rows(report: Dict[str, Any], weighted: Optional[Dict[str, float]]) -> list:
    rows = []
    for entry in report['per_class']:
        auc = entry['auc']
        rows.append({
            'class': entry['name'],
            'precision': entry['precision'],
            'recall': entry['recall'],
            'f1': entry['f1'],
            'support': entry['support'],
            'auc': f"{auc:.4f}" if auc is not None else "n/a",
            'summary': False,
        })
    total_support = sum(entry['support'] for entry in report['per_class'])
    rows.append({'class': 'macro avg', **report['macro'], 'support': total_support, 'auc': '', 'summary': True})
    if weighted is not None:
        rows.append({'class': 'weighted avg', **weighted, 'support': total_support, 'auc': '', 'summary': True})
    return rows


def generate_html_report(
    evaluation: Dict[str, Any],
    title: str = "Evaluation Report",
    history: Optional[pd.DataFrame] = None,
    distribution: Optional[pd.DataFrame] = None,
    parameter_summary: Optional[str] = None
) -> str:
    """
    Genera il report HTML di valutazione.

    Args:
        evaluation: output di metrics.evaluate_predictions
        title: sottotitolo del report (es. split e checkpoint)
        history: DataFrame di history.csv (opzionale)
        distribution: tabella DatasetIndex.distribution_table (opzionale)
        parameter_summary: riga di ParameterCount.summary (opzionale)

    Returns:
        Documento HTML completo
    """
    logger.info("📄 Generazione HTML report...")
    report = evaluation['report']
    cm = evaluation['confusion_matrix']

    charts = {'confusion_matrix': create_confusion_matrix_chart(cm.counts, cm.class_names)}
    curves = evaluation.get('roc_curves')
    if curves and any(curve is not None for curve in curves):
        charts['roc'] = create_roc_chart(curves, cm.class_names, evaluation.get('aucs'))
    if history is not None and not history.empty:
        charts['history'] = create_history_chart(history)
    charts_html = generate_charts_html(charts)

    accuracy = report['accuracy']
    class_metrics = evaluation.get('class_metrics')
    template = Template(HTML_TEMPLATE)
    return template.render(
        title=title,
        colors=CONFIG['COLORS'],
        report=report,
        accuracy_text=format_percentage(accuracy) if accuracy is not None else "n/a",
        classification_rows=_classification_rows(report, class_metrics.weighted if class_metrics else None),
        distribution_rows=distribution.to_dict('records') if distribution is not None else [],
        parameter_summary=parameter_summary,
        chart_titles=CHART_TITLES,
        charts=charts_html,
    )


def save_html_report(html_string: str, filepath: PathLike) -> str:
    """Salva HTML report su file."""
    ensure_parent_dir(filepath)
    with open(filepath, 'w', encoding='utf-8') as f:
        f.write(html_string)
    logger.info(f"💾 HTML salvato: {filepath}")
    return str(filepath)
