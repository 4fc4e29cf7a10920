# -*- coding: utf-8 -*-
"""
============================================================================
CBAMNET - Leaf Disease Classification Engine
Configuration Module
============================================================================
Definisce:
- Architettura di default (4 blocchi CBAM + testa densa)
- Iperparametri di training (Tabella II: Adam, lr 0.001, batch 64, 300 epoche)
- Parametri data pipeline (split 80/10/10, augmentation, estensioni)
- Parametri Grad-CAM (layer, alpha, colormap)
- Formato checkpoint
- Variabili d'ambiente (.env / CBAMNET_THREADS / CBAMNET_LOG_LEVEL)
============================================================================
"""

import os
import logging
from typing import Dict, Any, List

try:
    from dotenv import load_dotenv
    load_dotenv()
except ImportError:
    pass

logger = logging.getLogger(__name__)

# ============================================================================
# ENVIRONMENT
# ============================================================================

def load_environment() -> Dict[str, str]:
    """
    Legge le variabili d'ambiente del sistema.

    Returns:
        Dict con CBAMNET_THREADS e CBAMNET_LOG_LEVEL (stringhe, eventualmente vuote)
    """
    return {
        'CBAMNET_THREADS': os.getenv('CBAMNET_THREADS', ''),
        'CBAMNET_LOG_LEVEL': os.getenv('CBAMNET_LOG_LEVEL', 'INFO'),
    }

ENVIRONMENT = load_environment()

# ============================================================================
# CLASSI DEL DATASET ORIGINALE
# ============================================================================

LEAF_CLASS_NAMES: List[str] = ["Healthy Leaf", "Leaf Rot", "Leaf Spot"]

# Distribuzione per classe (originali → augmentati, 5x)
REFERENCE_DATASET_COUNTS = {
    "Healthy Leaf": {"original": 1080, "augmented": 5400},
    "Leaf Rot": {"original": 269, "augmented": 1345},
    "Leaf Spot": {"original": 688, "augmented": 3440},
}

# ============================================================================
# PARAMETRI OPERATIVI
# ============================================================================

CONFIG: Dict[str, Any] = {
    # --- ARCHITETTURA ---
    "INPUT_SIZE": 224,                  # Lato immagine (H = W)
    "INPUT_CHANNELS": 3,                # RGB
    "BLOCKS": [(32, 7), (64, 5), (128, 3), (256, 3)],  # (filtri, kernel)
    "HEAD_UNITS": [1024, 512],          # Dense prima della classificazione
    "NUM_CLASSES": 3,
    "REDUCTION_RATIO": 8,               # r del MLP di channel attention
    "REDUCTION_RATIO_CHOICES": [4, 8, 16],
    "SPATIAL_KERNEL": 7,                # f^7x7 della spatial attention
    "MLP_BIAS": True,                   # Bias nei due layer del MLP condiviso
    "DROPOUT_RATE": 0.5,
    "DROPOUT_AFTER": [True, True],      # Dropout dopo ciascuna Dense nascosta

    # --- BATCH NORMALIZATION ---
    "BN_MOMENTUM": 0.9,                 # new = 0.9*old + 0.1*batch
    "BN_EPSILON": 1e-5,

    # --- TRAINING (Tabella II) ---
    "EPOCHS": 300,
    "BATCH_SIZE": 64,
    "LEARNING_RATE": 0.001,
    "ADAM_BETA1": 0.9,
    "ADAM_BETA2": 0.999,
    "ADAM_EPS": 1e-8,
    "CHECKPOINT_POLICY": "best_val_acc",   # oppure "last"
    "CHECKPOINT_POLICIES": ["best_val_acc", "last"],
    "SEED": 42,

    # --- NUMERICA ---
    "DTYPE": "float32",
    "LOG_FLOOR": 1e-12,                 # Floor del log nella cross-entropy
    "GRADCHECK_EPSILON": 1e-3,
    "GRADCHECK_DENOM_FLOOR": 1e-8,

    # --- DATA PIPELINE ---
    "IMAGE_EXTENSIONS": [".jpg", ".jpeg", ".png"],
    "SPLIT_FRACTIONS": (0.8, 0.1, 0.1),     # train, val, test
    "MIN_SAMPLES_PER_CLASS": 3,
    "AUGMENT_KINDS": ["flip", "brightness", "contrast", "rotation"],
    "BRIGHTNESS_RANGE": (0.7, 1.3),
    "CONTRAST_RANGE": (0.7, 1.3),
    "ROTATION_RANGE_DEG": (-25.0, 25.0),
    "IMAGE_CACHE_MAX": 2048,            # Oltre questa soglia le immagini non restano in memoria
    "SYNTH_NOISE": 0.05,                # Sigma del rumore gaussiano sintetico (scala [0,1])

    # --- GRAD-CAM ---
    "GRADCAM_LAYER": "block4",
    "GRADCAM_ALPHA": 0.4,
    # Colormap blu → verde → giallo → rosso, ancore equispaziate su [0,1]
    "COLORMAP_ANCHORS": [
        (0, 0, 255),
        (0, 255, 0),
        (255, 255, 0),
        (255, 0, 0),
    ],

    # --- CHECKPOINT ---
    "CHECKPOINT_MAGIC": b"CBLF",
    "CHECKPOINT_VERSION": 1,

    # --- OUTPUT / REPORT ---
    "HISTORY_FILENAME": "history.csv",
    "SPLIT_AUDIT_FILENAME": "split.tsv",
    "JSON_INDENT": 2,
    "REFERENCE_PARAM_COUNT": 2.13e6,
    "REFERENCE_SIZE_MIB": 8.13,

    # --- VISUAL STYLING ---
    "COLORS": {
        "PRIMARY": ["#1a365d", "#2d3748", "#4a5568"],
        "ACCENT_GREEN": "#38a169",
        "ACCENT_RED": "#e53e3e",
        "ACCENT_ORANGE": "#d69e2e",
        "BG": "#f7fafc",
        "CARD_BG": "#ffffff",
        # Una linea per classe nei grafici ROC / history
        "CLASS_LINES": ["#38a169", "#e53e3e", "#3182ce", "#d69e2e", "#805ad5", "#dd6b20"],
        "TRAIN_LINE": "#3182ce",
        "VAL_LINE": "#dd6b20",
    },
}

# ============================================================================
# VALIDAZIONE CONFIGURAZIONE
# ============================================================================

def validate_config(config: Dict[str, Any] = None) -> bool:
    """
    Valida la coerenza interna della configurazione.

    Args:
        config: Dict da validare (default: CONFIG)

    Returns:
        True se configurazione valida, False altrimenti
    """
    config = config if config is not None else CONFIG
    errors = []

    blocks = config['BLOCKS']
    if len(blocks) != 4:
        errors.append(f"BLOCKS deve contenere 4 blocchi, trovati {len(blocks)}")
    for filters, kernel in blocks:
        if kernel % 2 == 0:
            errors.append(f"Kernel {kernel} non dispari (same padding asimmetrico)")
        if filters % config['REDUCTION_RATIO'] != 0:
            errors.append(f"REDUCTION_RATIO {config['REDUCTION_RATIO']} non divide {filters} filtri")

    if config['REDUCTION_RATIO'] not in config['REDUCTION_RATIO_CHOICES']:
        errors.append(
            f"REDUCTION_RATIO {config['REDUCTION_RATIO']} non tra le scelte {config['REDUCTION_RATIO_CHOICES']}"
        )

    if config['DTYPE'] not in ("float32", "float64"):
        errors.append(f"DTYPE non supportato: {config['DTYPE']}")

    if config['GRADCHECK_EPSILON'] <= 0 or config['GRADCHECK_DENOM_FLOOR'] <= 0:
        errors.append("GRADCHECK_EPSILON e GRADCHECK_DENOM_FLOOR devono essere > 0")

    if config['INPUT_SIZE'] % 16 != 0:
        errors.append(f"INPUT_SIZE {config['INPUT_SIZE']} non divisibile per 16 (4 max pooling)")

    if config['NUM_CLASSES'] < 2:
        errors.append(f"NUM_CLASSES deve essere >= 2, trovato {config['NUM_CLASSES']}")

    total_fraction = sum(config['SPLIT_FRACTIONS'])
    if abs(total_fraction - 1.0) > 1e-9:
        errors.append(f"SPLIT_FRACTIONS devono sommare a 1.0, somma attuale: {total_fraction}")

    if not 0.0 <= config['DROPOUT_RATE'] < 1.0:
        errors.append(f"DROPOUT_RATE fuori da [0,1): {config['DROPOUT_RATE']}")

    if config['CHECKPOINT_POLICY'] not in config['CHECKPOINT_POLICIES']:
        errors.append(f"CHECKPOINT_POLICY sconosciuta: {config['CHECKPOINT_POLICY']}")

    for anchor in config['COLORMAP_ANCHORS']:
        if len(anchor) != 3 or any(not 0 <= c <= 255 for c in anchor):
            errors.append(f"Ancora colormap non valida: {anchor}")

    if len(config['CHECKPOINT_MAGIC']) != 4:
        errors.append("CHECKPOINT_MAGIC deve essere lungo 4 byte")

    if errors:
        logger.error("❌ ERRORI CONFIGURAZIONE:")
        for err in errors:
            logger.error(f"   - {err}")
        return False

    logger.debug("✅ Configurazione validata con successo")
    return True

# ============================================================================
# UTILITY FUNCTIONS
# ============================================================================

def get_thread_count(cli_value: int = None) -> int:
    """
    Risolve il numero di worker della data pipeline.

    Priorità: flag --threads, poi CBAMNET_THREADS, poi os.cpu_count().

    Args:
        cli_value: Valore passato da CLI (None se assente)

    Returns:
        Numero di thread >= 1
    """
    if cli_value is not None:
        return max(1, int(cli_value))

    env_value = ENVIRONMENT.get('CBAMNET_THREADS', '')
    if env_value:
        try:
            return max(1, int(env_value))
        except ValueError:
            logger.warning(f"⚠️ CBAMNET_THREADS non numerico: {env_value!r}, uso default")

    return max(1, os.cpu_count() or 1)

def get_log_level(cli_value: str = None) -> int:
    """Ritorna il livello di logging (flag CLI > CBAMNET_LOG_LEVEL > INFO)."""
    name = (cli_value or ENVIRONMENT.get('CBAMNET_LOG_LEVEL') or 'INFO').upper()
    return getattr(logging, name, logging.INFO)

# ============================================================================
# AUTO-VALIDATION ON IMPORT
# ============================================================================

if __name__ != "__main__":
    validate_config()

# ============================================================================
# TEST SCRIPT (esegui con: python config.py)
# ============================================================================

if __name__ == "__main__":
    logging.basicConfig(level=logging.DEBUG)
    print("="*70)
    print("CBAMNET - Configuration Test")
    print("="*70)

    print("\n1. Validazione configurazione:")
    print(f"   {'✅ OK' if validate_config() else '❌ ERRORI'}")

    print("\n2. Architettura:")
    for i, (filters, kernel) in enumerate(CONFIG['BLOCKS'], 1):
        print(f"   Block {i}: {filters} filtri, kernel {kernel}x{kernel}")
    print(f"   Head: {CONFIG['HEAD_UNITS']} → {CONFIG['NUM_CLASSES']}")

    print("\n3. Environment:")
    print(f"   Threads: {get_thread_count()}")
    print(f"   Log level: {logging.getLevelName(get_log_level())}")

    print("\n" + "="*70)
    print("✅ Test completato")
