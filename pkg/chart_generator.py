# -*- coding: utf-8 -*-
"""
============================================================================
CBAMNET - Leaf Disease Classification Engine
Chart Generator Module
============================================================================
Grafici Plotly per il report di valutazione:
- Heatmap della confusion matrix
- Curve ROC one-vs-rest per classe
- Curve di training (loss e accuracy, train vs val)

Ogni grafico ha un div id fisso: l'HTML generato è riproducibile.
============================================================================
"""

import logging
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from config import CONFIG

# ============================================================================
# LOGGING
# ============================================================================

logger = logging.getLogger(__name__)

# ============================================================================
# LAYOUT COMUNE
# ============================================================================

def _apply_layout(fig: go.Figure, title: str, height: int = 450) -> go.Figure:
    colors = CONFIG['COLORS']
    fig.update_layout(
        title={
            'text': title,
            'font': {'size': 18, 'color': colors['PRIMARY'][0]},
            'x': 0.5,
            'xanchor': 'center'
        },
        template='plotly_white',
        height=height,
        margin=dict(l=60, r=40, t=70, b=50),
        legend=dict(orientation="h", yanchor="bottom", y=1.02, xanchor="right", x=1),
        plot_bgcolor='rgba(250, 250, 250, 0.5)',
        paper_bgcolor='white'
    )
    fig.update_xaxes(gridcolor='rgba(200, 200, 200, 0.3)', showgrid=True)
    fig.update_yaxes(gridcolor='rgba(200, 200, 200, 0.3)', showgrid=True)
    return fig


def _class_color(index: int) -> str:
    palette = CONFIG['COLORS']['CLASS_LINES']
    return palette[index % len(palette)]

# ============================================================================
# CHART GENERATION
# ============================================================================

def create_confusion_matrix_chart(counts: np.ndarray, class_names: Sequence[str]) -> go.Figure:
    """
    Heatmap K x K: righe = classe vera, colonne = predetta, conteggi annotati.

    Args:
        counts: matrice (K, K) di interi
        class_names: nomi delle classi

    Returns:
        Plotly Figure object
    """
    counts = np.asarray(counts)
    names = list(class_names)

    fig = go.Figure(
        data=go.Heatmap(
            z=counts,
            x=names,
            y=names,
            colorscale='Blues',
            text=[[str(int(v)) for v in row] for row in counts],
            texttemplate='%{text}',
            textfont={"size": 14},
            colorbar=dict(title="Count"),
            hovertemplate='True %{y}<br>Predicted %{x}<br>Count %{z}<extra></extra>'
        )
    )
    fig.update_yaxes(autorange='reversed', title_text='True class')
    fig.update_xaxes(title_text='Predicted class')
    return _apply_layout(fig, 'Confusion Matrix')


def create_roc_chart(
    curves: Sequence[Optional[Dict[str, np.ndarray]]],
    class_names: Sequence[str],
    aucs: Optional[Sequence[Optional[float]]] = None
) -> go.Figure:
    """
    Curve ROC one-vs-rest; le classi senza curva definita vengono saltate.

    Args:
        curves: per classe {fpr, tpr} o None
        class_names: nomi delle classi
        aucs: AUC per classe (etichetta in legenda)
    """
    fig = go.Figure()

    for c, curve in enumerate(curves):
        if curve is None:
            logger.debug(f"Curva ROC non definita per {class_names[c]}")
            continue
        label = class_names[c]
        if aucs is not None and aucs[c] is not None:
            label = f"{label} (AUC {aucs[c]:.4f})"
        fig.add_trace(
            go.Scatter(
                x=np.asarray(curve['fpr']),
                y=np.asarray(curve['tpr']),
                mode='lines',
                name=label,
                line=dict(color=_class_color(c), width=2)
            )
        )

    fig.add_trace(
        go.Scatter(
            x=[0.0, 1.0],
            y=[0.0, 1.0],
            mode='lines',
            name='Chance',
            line=dict(color='rgba(128, 128, 128, 0.6)', width=1, dash='dash'),
            showlegend=False
        )
    )
    fig.update_xaxes(title_text='False positive rate', range=[0, 1])
    fig.update_yaxes(title_text='True positive rate', range=[0, 1.02])
    return _apply_layout(fig, 'ROC Curves')


def create_history_chart(history: pd.DataFrame) -> go.Figure:
    """
    Loss e accuracy per epoca (train vs val) su due pannelli affiancati.

    Args:
        history: DataFrame con colonne epoch, train_loss, train_acc, val_loss, val_acc
    """
    if history.empty:
        logger.warning("History vuota, grafico non generato")
        return go.Figure()

    colors = CONFIG['COLORS']
    fig = make_subplots(rows=1, cols=2, subplot_titles=("Loss", "Accuracy"))

    for col, metric in ((1, 'loss'), (2, 'acc')):
        for split, color in (('train', colors['TRAIN_LINE']), ('val', colors['VAL_LINE'])):
            column = f"{split}_{metric}"
            if column not in history.columns:
                continue
            fig.add_trace(
                go.Scatter(
                    x=history['epoch'],
                    y=history[column],
                    mode='lines+markers',
                    name=f"{split} {metric}",
                    line=dict(color=color, width=2),
                    marker=dict(size=4)
                ),
                row=1, col=col
            )

    fig.update_xaxes(title_text='Epoch')
    return _apply_layout(fig, 'Training History', height=400)

# ============================================================================
# HTML EXPORT
# ============================================================================

def generate_charts_html(charts: Dict[str, go.Figure]) -> Dict[str, str]:
    """
    Converte grafici Plotly in HTML strings per embedding.

    Il div id è derivato dalla chiave del grafico; plotly.js viene caricato
    una sola volta dal template.
    """
    logger.debug(f"Conversione {len(charts)} grafici in HTML")

    charts_html: Dict[str, str] = {}
    for key, fig in charts.items():
        charts_html[key] = fig.to_html(
            full_html=False,
            include_plotlyjs=False,
            div_id=f"chart-{key}",
            config={
                'displayModeBar': True,
                'displaylogo': False,
                'modeBarButtonsToRemove': ['lasso2d', 'select2d']
            }
        )
    return charts_html
