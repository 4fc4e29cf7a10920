# -*- coding: utf-8 -*-
"""
============================================================================
CBAMNET - Leaf Disease Classification Engine
Grad-CAM Explain Module
============================================================================
Mappe di salienza Grad-CAM:
  α_k   = media spaziale di ∂logit_c / ∂A_k   (A = feature map del layer)
  mappa = ReLU(Σ_k α_k A_k), upsample bilineare (angoli allineati), / max

Overlay: colormap lineare a tratti blu → verde → giallo → rosso
(ancore equispaziate su [0,1]) fusa con l'immagine originale:
  pixel = rint(alpha · colore + (1 - alpha) · originale)
============================================================================
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from PIL import Image
from scipy.ndimage import zoom

from config import CONFIG
from data_pipeline import LabeledSample, decode_sample, to_uint8_hwc
from model_assembly import Model, forward
from nn_layers import one_hot, softmax
from tensor_autodiff import Tensor, backward, mul, no_grad, sum_all
from utils import ensure_dir_exists

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# ============================================================================
# ERRORI
# ============================================================================

class UnknownLayerError(ValueError):
    """Layer di Grad-CAM inesistente; il messaggio elenca i nomi validi."""

    def __init__(self, name: str, valid: List[str]):
        super().__init__(f"Layer sconosciuto {name!r}. Validi: {', '.join(valid)}")
        self.name = name
        self.valid = valid


class OverlayError(ValueError):
    """Heatmap e immagine di dimensioni diverse, o alpha fuori da [0,1]."""

# ============================================================================
# TIPI
# ============================================================================

@dataclass
class Heatmap:
    values: np.ndarray        # (H, W) in [0, 1]
    source_layer: str
    target_class: int
    is_zero: bool = False

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


@dataclass
class OverlayImage:
    pixels: np.ndarray        # (H, W, 3) uint8
    alpha: float

# ============================================================================
# GRAD-CAM
# ============================================================================

def valid_layer_names(model: Model) -> List[str]:
    return list(model.capture_points) + model.layer_names()


def upsample_bilinear(values: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Interpolazione bilineare con angoli allineati (i vertici coincidono con la griglia sorgente)."""
    h, w = values.shape
    if (h, w) == tuple(size):
        return values.astype(np.float64, copy=True)
    factors = (size[0] / h, size[1] / w)
    return zoom(values.astype(np.float64), factors, order=1, mode='nearest', grid_mode=False)


def compute_gradcam(
    model: Model,
    image: Tensor,
    target_class: int,
    layer: str = CONFIG['GRADCAM_LAYER']
) -> Heatmap:
    """
    Heatmap Grad-CAM per una singola immagine (1, 3, S, S).

    Il gradiente è quello del logit (pre-softmax) della classe target.
    I buffer gradiente dei parametri vengono rilasciati al termine.

    Raises:
        UnknownLayerError: layer non esistente
        ValueError: target_class fuori da [0, K) o batch diverso da 1
    """
    if model.resolve_capture(layer) is None:
        raise UnknownLayerError(layer, valid_layer_names(model))
    num_classes = model.spec.num_classes
    if not 0 <= target_class < num_classes:
        raise ValueError(f"target_class {target_class} fuori da [0, {num_classes})")
    if image.shape[0] != 1:
        raise ValueError(f"Grad-CAM richiede una sola immagine, batch {image.shape[0]}")

    model.set_mode("infer")
    try:
        logits, activations = forward(model, image, capture=layer)
        selector = Tensor(one_hot([target_class], num_classes), dtype=logits.dtype)
        backward(sum_all(mul(logits, selector)))

        features = activations.data[0].astype(np.float64)
        grads = activations.grad[0].astype(np.float64) if activations.grad is not None else np.zeros_like(features)
    finally:
        for param in model.parameters():
            param.grad = None

    weights = grads.mean(axis=(1, 2))
    raw = np.maximum(np.tensordot(weights, features, axes=([0], [0])), 0.0)

    size = (image.shape[2], image.shape[3])
    peak = float(raw.max()) if raw.size else 0.0
    if peak <= 0.0:
        logger.warning(f"⚠️ Grad-CAM nulla per classe {target_class} su {layer}")
        return Heatmap(np.zeros(size), layer, target_class, is_zero=True)

    upsampled = upsample_bilinear(raw, size)
    values = np.clip(upsampled / upsampled.max(), 0.0, 1.0)
    return Heatmap(values, layer, target_class)


# ============================================================================
# COLORMAP / OVERLAY
# ============================================================================

def apply_colormap(values: np.ndarray, anchors=None) -> np.ndarray:
    """
    Mappa [0,1] → RGB float (0-255) per interpolazione lineare tra ancore equispaziate.

    Returns:
        Array (H, W, 3) float64
    """
    anchors = np.asarray(anchors if anchors is not None else CONFIG['COLORMAP_ANCHORS'], dtype=np.float64)
    positions = np.linspace(0.0, 1.0, len(anchors))
    clipped = np.clip(values, 0.0, 1.0)
    return np.stack([np.interp(clipped, positions, anchors[:, c]) for c in range(3)], axis=-1)


def overlay(heatmap: Heatmap, original: np.ndarray, alpha: float = CONFIG['GRADCAM_ALPHA']) -> OverlayImage:
    """
    Fusione alpha · colormap(heatmap) + (1 - alpha) · originale.

    Args:
        heatmap: Heatmap (H, W)
        original: immagine uint8 (H, W, 3)
        alpha: peso della colormap in [0, 1]

    Raises:
        OverlayError: alpha fuori range o dimensioni diverse
    """
    if not 0.0 <= alpha <= 1.0:
        raise OverlayError(f"alpha fuori da [0,1]: {alpha}")
    original = np.asarray(original)
    if original.shape[:2] != heatmap.shape or original.ndim != 3 or original.shape[2] != 3:
        raise OverlayError(f"Dimensioni incompatibili: heatmap {heatmap.shape}, immagine {original.shape}")

    colors = apply_colormap(heatmap.values)
    blended = alpha * colors + (1.0 - alpha) * original.astype(np.float64)
    pixels = np.clip(np.rint(blended), 0, 255).astype(np.uint8)
    return OverlayImage(pixels=pixels, alpha=alpha)


def save_heatmap_png(heatmap: Heatmap, path: PathLike) -> None:
    gray = np.clip(np.rint(heatmap.values * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(gray).save(path)


def save_overlay_png(image: OverlayImage, path: PathLike) -> None:
    Image.fromarray(image.pixels).save(path)

# ============================================================================
# SPIEGAZIONE DI UN'IMMAGINE
# ============================================================================

def explain_image(
    model: Model,
    image_path: PathLike,
    out_dir: PathLike,
    target_class: Optional[int] = None,
    layer: str = CONFIG['GRADCAM_LAYER'],
    alpha: float = CONFIG['GRADCAM_ALPHA']
) -> Dict[str, Any]:
    """
    Carica l'immagine, predice, calcola Grad-CAM e scrive
    <stem>_heatmap.png e <stem>_overlay.png in out_dir.

    Returns:
        Dict con classe predetta, classe spiegata, probabilità e path scritti
    """
    path = Path(image_path)
    size = model.spec.input_size
    pixels = decode_sample(LabeledSample(path, 0, ""), size)
    x = Tensor(pixels[None])

    model.set_mode("infer")
    with no_grad():
        probs = softmax(forward(model, x)).matrix_view()[0].astype(np.float64)
    predicted = int(probs.argmax())
    target = predicted if target_class is None else int(target_class)

    heatmap = compute_gradcam(model, x, target, layer)
    blended = overlay(heatmap, to_uint8_hwc(pixels), alpha)

    ensure_dir_exists(out_dir)
    heatmap_path = Path(out_dir) / f"{path.stem}_heatmap.png"
    overlay_path = Path(out_dir) / f"{path.stem}_overlay.png"
    save_heatmap_png(heatmap, heatmap_path)
    save_overlay_png(blended, overlay_path)

    class_names = model.metadata.get('class_names') or [str(i) for i in range(model.spec.num_classes)]
    logger.info(
        f"🔥 Grad-CAM {path.name}: predetta {class_names[predicted]} ({probs[predicted]:.3f}), "
        f"spiegata {class_names[target]} su {layer}"
    )
    return {
        'image': str(path),
        'predicted_class': predicted,
        'target_class': target,
        'probabilities': probs.tolist(),
        'is_zero': heatmap.is_zero,
        'heatmap_path': str(heatmap_path),
        'overlay_path': str(overlay_path),
    }
