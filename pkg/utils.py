# -*- coding: utf-8 -*-
"""
============================================================================
CBAMNET - Leaf Disease Classification Engine
Utilities Module
============================================================================
Funzioni helper comuni utilizzate in tutto il sistema:
- Number formatting (conteggi parametri, percentuali, MiB)
- Logger setup (colorlog su stderr)
- Progress bar (tqdm)
- File operations
- Digest di array (verifica purezza dell'inferenza)
============================================================================
"""

import os
import sys
import hashlib
import logging
from typing import Any, Iterable, Optional, Union

import numpy as np

# ============================================================================
# NUMBER FORMATTING
# ============================================================================

def format_number(
    value: Union[int, float, np.number],
    decimals: int = 0,
    use_separator: bool = True
) -> str:
    """
    Formatta numero con decimali e separatore migliaia.

    Args:
        value: Numero da formattare
        decimals: Numero decimali (default: 0)
        use_separator: Usa separatore migliaia (default: True)

    Returns:
        Stringa formattata

    Examples:
        >>> format_number(2128523)
        '2,128,523'
        >>> format_number(0.95579, 4)
        '0.9558'
    """
    if value is None:
        return "N/A"

    try:
        value = float(value)
        if np.isnan(value):
            return "N/A"

        if use_separator:
            return f"{value:,.{decimals}f}"
        return f"{value:.{decimals}f}"

    except (ValueError, TypeError):
        return "N/A"

def format_percentage(
    value: Union[float, np.number],
    decimals: int = 2,
    as_fraction: bool = True
) -> str:
    """
    Formatta numero come percentuale.

    Args:
        value: Valore (frazione 0-1 se as_fraction, altrimenti già in %)
        decimals: Numero decimali
        as_fraction: Moltiplica per 100 prima di formattare

    Returns:
        Stringa formattata con %

    Examples:
        >>> format_percentage(0.9558)
        '95.58%'
    """
    if value is None:
        return "N/A"

    try:
        value = float(value)
        if np.isnan(value):
            return "N/A"
        if as_fraction:
            value *= 100.0
        return f"{value:.{decimals}f}%"

    except (ValueError, TypeError):
        return "N/A"

def format_large_number(value: Union[int, float, np.number]) -> str:
    """
    Formatta numeri grandi con suffissi (K, M, B).

    Examples:
        >>> format_large_number(2128523)
        '2.13M'
    """
    if value is None:
        return "N/A"

    try:
        value = float(value)
        abs_value = abs(value)
        sign = "-" if value < 0 else ""

        if abs_value >= 1e9:
            return f"{sign}{abs_value/1e9:.2f}B"
        elif abs_value >= 1e6:
            return f"{sign}{abs_value/1e6:.2f}M"
        elif abs_value >= 1e3:
            return f"{sign}{abs_value/1e3:.2f}K"
        else:
            return f"{sign}{abs_value:.2f}"

    except (ValueError, TypeError):
        return "N/A"

def format_bytes(size_bytes: Union[int, float]) -> str:
    """
    Dimensione in formato leggibile (base 1024).

    Examples:
        >>> format_bytes(8521772)
        '8.13 MiB'
    """
    size = float(size_bytes)
    for unit in ['B', 'KiB', 'MiB', 'GiB']:
        if size < 1024.0:
            return f"{size:.2f} {unit}"
        size /= 1024.0
    return f"{size:.2f} TiB"

# ============================================================================
# LOGGING SETUP
# ============================================================================

def setup_logger(
    name: Optional[str] = None,
    level: int = logging.INFO,
    log_file: Optional[str] = None,
    use_colors: bool = True
) -> logging.Logger:
    """
    Setup logger personalizzato.

    Senza name configura il root logger, così tutti i logger di modulo
    (logging.getLogger(__name__)) ereditano handler e formato.
    L'output va su stderr: stdout resta riservato ai risultati dei comandi.

    Args:
        name: Nome logger (default: root)
        level: Livello logging (default: INFO)
        log_file: Path file log (opzionale)
        use_colors: Usa colorlog se disponibile

    Returns:
        Logger configurato
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)

    # Rimuovi handler esistenti (i file restano chiusi)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        if isinstance(handler, logging.FileHandler):
            handler.close()

    log_format = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    date_format = '%Y-%m-%d %H:%M:%S'

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(level)

    if use_colors:
        try:
            from colorlog import ColoredFormatter

            formatter = ColoredFormatter(
                '%(log_color)s%(asctime)s - %(name)s - %(levelname)s - %(message)s%(reset)s',
                datefmt=date_format,
                log_colors={
                    'DEBUG': 'cyan',
                    'INFO': 'green',
                    'WARNING': 'yellow',
                    'ERROR': 'red',
                    'CRITICAL': 'red,bg_white',
                }
            )
        except ImportError:
            formatter = logging.Formatter(log_format, datefmt=date_format)
    else:
        formatter = logging.Formatter(log_format, datefmt=date_format)

    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        ensure_parent_dir(log_file)
        file_handler = logging.FileHandler(log_file, encoding='utf-8')
        file_handler.setLevel(level)
        file_handler.setFormatter(logging.Formatter(log_format, datefmt=date_format))
        logger.addHandler(file_handler)

    return logger

# ============================================================================
# PROGRESS BAR
# ============================================================================

_PROGRESS_ENABLED = True

def set_progress_enabled(enabled: bool) -> None:
    """Abilita/disabilita globalmente le progress bar (flag --quiet)."""
    global _PROGRESS_ENABLED
    _PROGRESS_ENABLED = enabled

def progress_bar(iterable: Iterable, desc: str = "", total: Optional[int] = None, leave: bool = False):
    """
    Wrapper tqdm: disattivato se --quiet o se stderr non è un terminale.

    Args:
        iterable: Iterabile da avvolgere
        desc: Etichetta della barra
        total: Numero elementi (se iterable non ha len)
        leave: Lascia la barra a fine ciclo

    Returns:
        Iteratore (tqdm o l'iterabile originale)
    """
    if not _PROGRESS_ENABLED or not sys.stderr.isatty():
        return iterable

    try:
        from tqdm import tqdm
        return tqdm(iterable, desc=desc, total=total, leave=leave, file=sys.stderr)
    except ImportError:
        return iterable

# ============================================================================
# FILE OPERATIONS
# ============================================================================

def ensure_dir_exists(path: Union[str, os.PathLike]) -> None:
    """
    Crea directory se non esiste.

    Args:
        path: Path directory
    """
    os.makedirs(path, exist_ok=True)

def ensure_parent_dir(filepath: Union[str, os.PathLike]) -> None:
    """Crea la directory che conterrà filepath."""
    parent = os.path.dirname(os.fspath(filepath))
    if parent:
        os.makedirs(parent, exist_ok=True)

# ============================================================================
# DIGEST
# ============================================================================

def hash_arrays(arrays: Iterable[Any]) -> str:
    """
    SHA-256 di una sequenza di array (shape + dtype + byte).

    Usato per verificare che l'inferenza non modifichi i tensori del modello.

    Args:
        arrays: Iterabile di np.ndarray

    Returns:
        Hex digest
    """
    digest = hashlib.sha256()
    for array in arrays:
        array = np.ascontiguousarray(array)
        digest.update(str(array.shape).encode('utf-8'))
        digest.update(str(array.dtype).encode('utf-8'))
        digest.update(array.tobytes())
    return digest.hexdigest()

# ============================================================================
# TEST SCRIPT
# ============================================================================

if __name__ == "__main__":
    print("="*70)
    print("CBAMNET - Utilities Test")
    print("="*70)

    print("\n1. Number Formatting:")
    print(f"   format_number(2128523): {format_number(2128523)}")
    print(f"   format_percentage(0.9558): {format_percentage(0.9558)}")
    print(f"   format_large_number(2128523): {format_large_number(2128523)}")
    print(f"   format_bytes(8521772): {format_bytes(8521772)}")

    print("\n2. Digest:")
    print(f"   hash_arrays([zeros(3)]): {hash_arrays([np.zeros(3, dtype=np.float32)])[:16]}...")

    print("\n3. Logger Setup:")
    test_logger = setup_logger('test_logger', level=logging.INFO)
    test_logger.info("This is a test log message")

    print("\n" + "="*70)
    print("✅ Test completato con successo!")
