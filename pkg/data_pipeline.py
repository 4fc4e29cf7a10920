# -*- coding: utf-8 -*-
"""
============================================================================
CBAMNET - Leaf Disease Classification Engine
Data Pipeline Module
============================================================================
Gestisce:
- Scansione dataset directory-per-classe (root/<classe>/*.jpg|jpeg|png)
- Decode + resize bilineare + scala [0,1] (Pillow)
- Split stratificato 80/10/10 (floor per val/test, resto al train)
- Augmentation: flip, brightness, contrast, rotation (5x con originali)
- Dataset sintetico con pattern piantato per classe
- Caricamento batch in parallelo con ordine deterministico
============================================================================
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError

from config import CONFIG, get_thread_count
from tensor_autodiff import Tensor
from utils import ensure_dir_exists, format_number

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
SPLIT_NAMES = ("train", "val", "test")

# ============================================================================
# ERRORI
# ============================================================================

class DatasetError(Exception):
    """Dataset non utilizzabile (root illeggibile, classi vuote, parametri errati)."""


class ImageDecodeError(DatasetError):
    """Immagine non decodificabile; porta con sé il path."""

    def __init__(self, path: PathLike, reason: str):
        super().__init__(f"Impossibile decodificare {path}: {reason}")
        self.path = Path(path)


class SplitError(DatasetError):
    """Split impossibile (classe troppo piccola, frazioni incoerenti, audit non corrispondente)."""

# ============================================================================
# TIPI
# ============================================================================

@dataclass(frozen=True)
class LabeledSample:
    """
    Immagine etichettata.

    augmentation/aug_seed identificano un campione virtuale: l'immagine
    sorgente viene trasformata al caricamento, senza copie su disco.
    """
    path: Path
    class_index: int
    class_name: str
    augmentation: Optional[str] = None
    aug_seed: int = 0


@dataclass
class DatasetIndex:
    samples: List[LabeledSample]
    class_names: List[str]
    root: Optional[Path] = None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def counts(self) -> List[int]:
        counts = [0] * len(self.class_names)
        for sample in self.samples:
            counts[sample.class_index] += 1
        return counts

    def labels(self, indices: Optional[Sequence[int]] = None) -> np.ndarray:
        chosen = range(len(self.samples)) if indices is None else indices
        return np.array([self.samples[i].class_index for i in chosen], dtype=np.int64)

    def audit_key(self, sample: LabeledSample) -> str:
        """Path relativo alla root in forma posix: non dipende da come è stata scritta --data."""
        path = sample.path
        if self.root is not None:
            try:
                path = path.relative_to(self.root)
            except ValueError:
                pass
        key = path.as_posix()
        return f"{key}#{sample.augmentation}" if sample.augmentation else key

    def distribution_table(self, augmentation_factor: int = 5) -> pd.DataFrame:
        """Distribuzione per classe: immagini presenti e totale dopo augmentation 5x."""
        counts = self.counts
        table = pd.DataFrame({
            'class': self.class_names,
            'images': counts,
            'augmented': [c * augmentation_factor for c in counts],
        })
        total = pd.DataFrame([{
            'class': 'Total',
            'images': sum(counts),
            'augmented': sum(counts) * augmentation_factor,
        }])
        return pd.concat([table, total], ignore_index=True)


@dataclass
class SplitAssignment:
    train: List[int]
    val: List[int]
    test: List[int]
    seed: int
    fractions: Tuple[float, float, float] = tuple(CONFIG['SPLIT_FRACTIONS'])

    def get(self, name: str) -> List[int]:
        """Indici di uno split; "all" ritorna l'unione ordinata."""
        if name == "all":
            return sorted(self.train + self.val + self.test)
        if name not in SPLIT_NAMES:
            raise SplitError(f"Split sconosciuto: {name!r} (ammessi: {SPLIT_NAMES + ('all',)})")
        return getattr(self, name)

    def sizes(self) -> Dict[str, int]:
        return {name: len(getattr(self, name)) for name in SPLIT_NAMES}

# ============================================================================
# SCANSIONE
# ============================================================================

def _is_image(path: Path) -> bool:
    return path.is_file() and path.suffix.lower() in CONFIG['IMAGE_EXTENSIONS']


def scan_dataset(root_dir: PathLike) -> DatasetIndex:
    """
    Indicizza root/<classe>/*.{jpg,jpeg,png}.

    Classi in ordine lessicografico dei nomi di cartella; file in ordine
    di nome. I file con altre estensioni vengono ignorati.

    Raises:
        DatasetError: root illeggibile, meno di 2 classi, classe vuota
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise DatasetError(f"Directory dataset non leggibile: {root}")

    try:
        class_dirs = sorted(
            (p for p in root.iterdir() if p.is_dir() and not p.name.startswith('.')),
            key=lambda p: p.name
        )
    except OSError as e:
        raise DatasetError(f"Directory dataset non leggibile: {root} ({e})") from e

    if len(class_dirs) < 2:
        raise DatasetError(f"Servono almeno 2 cartelle di classe in {root}, trovate {len(class_dirs)}")

    samples: List[LabeledSample] = []
    class_names = [d.name for d in class_dirs]
    for class_index, class_dir in enumerate(class_dirs):
        files = sorted((p for p in class_dir.iterdir() if _is_image(p)), key=lambda p: p.name)
        if not files:
            raise DatasetError(f"Cartella di classe senza immagini: {class_dir}")
        samples.extend(LabeledSample(path, class_index, class_dir.name) for path in files)

    index = DatasetIndex(samples=samples, class_names=class_names, root=root)
    logger.info(
        f"📥 Dataset {root}: {format_number(len(index))} immagini, {len(class_names)} classi "
        f"({', '.join(f'{n}={c}' for n, c in zip(class_names, index.counts))})"
    )
    return index

# ============================================================================
# DECODE / RESIZE
# ============================================================================

def read_rgb(path: PathLike) -> np.ndarray:
    """
    Decodifica un'immagine in array float32 (H, W, 3) su scala 0-255.

    Raises:
        ImageDecodeError: file mancante o non decodificabile
    """
    try:
        with Image.open(path) as img:
            img.load()
            if img.mode != "RGB":
                img = img.convert("RGB")
            return np.asarray(img, dtype=np.float32)
    except (OSError, UnidentifiedImageError, ValueError) as e:
        raise ImageDecodeError(path, str(e)) from e


def resize_bilinear(rgb: np.ndarray, size: int) -> np.ndarray:
    """
    Resize bilineare per canale in float (modo "F" di Pillow).

    Stessa dimensione → copia esatta.
    """
    height, width = rgb.shape[:2]
    if (height, width) == (size, size):
        return rgb.copy()

    channels = [
        np.asarray(
            Image.fromarray(np.ascontiguousarray(rgb[..., c], dtype=np.float32)).resize(
                (size, size), resample=Image.BILINEAR
            ),
            dtype=np.float32,
        )
        for c in range(rgb.shape[2])
    ]
    return np.stack(channels, axis=-1)


def to_chw_unit(rgb: np.ndarray) -> np.ndarray:
    """(H, W, 3) 0-255 → (3, H, W) in [0, 1]."""
    return np.clip(rgb.transpose(2, 0, 1) / 255.0, 0.0, 1.0).astype(np.float32)


def to_uint8_hwc(image: np.ndarray) -> np.ndarray:
    """(3, H, W) in [0, 1] → (H, W, 3) uint8."""
    return np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)


def decode_sample(sample: LabeledSample, size: int = CONFIG['INPUT_SIZE']) -> np.ndarray:
    """Immagine (3, size, size) in [0,1], con l'eventuale augmentation applicata."""
    image = to_chw_unit(resize_bilinear(read_rgb(sample.path), size))
    if sample.augmentation:
        image = augment_one(image, sample.augmentation, sample.aug_seed)
    return image


def load_image(sample: LabeledSample, size: int = CONFIG['INPUT_SIZE']) -> Tensor:
    """
    Carica un campione come Tensor (1, 3, size, size).

    Raises:
        ImageDecodeError: decode fallito (con il path)
    """
    return Tensor(decode_sample(sample, size)[None])

# ============================================================================
# SPLIT STRATIFICATO
# ============================================================================

def _validate_fractions(fractions: Sequence[float]) -> Tuple[float, float, float]:
    if len(fractions) != 3 or any(f < 0 or f > 1 for f in fractions):
        raise SplitError(f"Frazioni di split non valide: {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-6:
        raise SplitError(f"Le frazioni di split devono sommare a 1, somma {sum(fractions)}")
    return tuple(float(f) for f in fractions)


def stratified_split(
    index: DatasetIndex,
    seed: int = CONFIG['SEED'],
    fractions: Sequence[float] = CONFIG['SPLIT_FRACTIONS']
) -> SplitAssignment:
    """
    Per ogni classe: permutazione con seed, floor(f_test·n) al test,
    floor(f_val·n) alla validazione, il resto al training.

    Raises:
        SplitError: classe con meno di MIN_SAMPLES_PER_CLASS campioni
    """
    train_frac, val_frac, test_frac = _validate_fractions(fractions)
    rng = np.random.default_rng(seed)

    per_class: Dict[int, List[int]] = {c: [] for c in range(index.num_classes)}
    for i, sample in enumerate(index.samples):
        per_class[sample.class_index].append(i)

    train, val, test = [], [], []
    for class_index, members in per_class.items():
        n = len(members)
        if n < CONFIG['MIN_SAMPLES_PER_CLASS']:
            raise SplitError(
                f"Classe {index.class_names[class_index]!r} con {n} campioni "
                f"(minimo {CONFIG['MIN_SAMPLES_PER_CLASS']})"
            )
        order = rng.permutation(np.array(members, dtype=np.int64))
        n_test = math.floor(test_frac * n + 1e-9)
        n_val = math.floor(val_frac * n + 1e-9)
        test.extend(int(i) for i in order[:n_test])
        val.extend(int(i) for i in order[n_test:n_test + n_val])
        train.extend(int(i) for i in order[n_test + n_val:])

    split = SplitAssignment(sorted(train), sorted(val), sorted(test), seed=seed,
                            fractions=(train_frac, val_frac, test_frac))
    logger.info(f"✂️ Split stratificato (seed {seed}): {split.sizes()}")
    return split


def write_split_audit(index: DatasetIndex, split: SplitAssignment, path: PathLike) -> None:
    """Una riga `path<TAB>split` per campione (path relativo alla root), nell'ordine dell'indice."""
    membership = {}
    for name in SPLIT_NAMES:
        for i in split.get(name):
            membership[i] = name

    lines = [f"{index.audit_key(index.samples[i])}\t{membership[i]}" for i in range(len(index)) if i in membership]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.debug(f"Audit split scritto: {path} ({len(lines)} righe)")


def read_split_audit(path: PathLike, index: DatasetIndex, seed: int = 0) -> SplitAssignment:
    """
    Ricostruisce lo split da un file di audit.

    Raises:
        SplitError: righe malformate, split sconosciuti, campioni non trovati
    """
    positions = {index.audit_key(sample): i for i, sample in enumerate(index.samples)}
    groups: Dict[str, List[int]] = {name: [] for name in SPLIT_NAMES}

    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise SplitError(f"File di split non leggibile: {path} ({e})") from e

    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.rsplit("\t", 1)
        if len(parts) != 2 or parts[1] not in SPLIT_NAMES:
            raise SplitError(f"{path}:{line_no}: riga non valida {line!r}")
        key, name = parts
        if key not in positions:
            raise SplitError(f"{path}:{line_no}: campione non presente nel dataset: {key}")
        groups[name].append(positions[key])

    return SplitAssignment(
        sorted(groups['train']), sorted(groups['val']), sorted(groups['test']), seed=seed
    )

# ============================================================================
# AUGMENTATION
# ============================================================================

def flip_horizontal(image: np.ndarray) -> np.ndarray:
    return image[..., ::-1].copy()


def adjust_brightness(image: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(image * factor, 0.0, 1.0).astype(image.dtype)


def adjust_contrast(image: np.ndarray, factor: float) -> np.ndarray:
    """(x - media) · c + media, media globale su canali e pixel."""
    mean = image.mean()
    return np.clip((image - mean) * factor + mean, 0.0, 1.0).astype(image.dtype)


def rotate_image(image: np.ndarray, angle: float) -> np.ndarray:
    """Rotazione attorno al centro, bilineare, riempimento a zero; 0° → copia."""
    if angle == 0:
        return image.copy()
    channels = [
        np.asarray(
            Image.fromarray(np.ascontiguousarray(image[c], dtype=np.float32)).rotate(
                angle, resample=Image.BILINEAR, expand=False, fillcolor=0.0
            ),
            dtype=np.float32,
        )
        for c in range(image.shape[0])
    ]
    return np.clip(np.stack(channels), 0.0, 1.0).astype(image.dtype)


def augment_one(image: np.ndarray, kind: str, seed: int) -> np.ndarray:
    """
    Applica una singola trasformazione con parametri estratti da (seed, kind).

    Args:
        image: (3, H, W) in [0, 1]
        kind: flip | brightness | contrast | rotation
        seed: seed del campione
    """
    kinds = CONFIG['AUGMENT_KINDS']
    if kind not in kinds:
        raise DatasetError(f"Augmentation sconosciuta: {kind!r} (ammesse: {kinds})")
    rng = np.random.default_rng([seed, kinds.index(kind)])

    if kind == "flip":
        return flip_horizontal(image)
    if kind == "brightness":
        return adjust_brightness(image, rng.uniform(*CONFIG['BRIGHTNESS_RANGE']))
    if kind == "contrast":
        return adjust_contrast(image, rng.uniform(*CONFIG['CONTRAST_RANGE']))
    return rotate_image(image, rng.uniform(*CONFIG['ROTATION_RANGE_DEG']))


def augment_image(
    image: np.ndarray,
    kinds: Sequence[str] = tuple(CONFIG['AUGMENT_KINDS']),
    seed: int = CONFIG['SEED']
) -> List[np.ndarray]:
    """Una immagine trasformata per ciascun kind, nell'ordine richiesto."""
    return [augment_one(image, kind, seed) for kind in kinds]


def _sample_seed(seed: int, position: int) -> int:
    return int(np.random.SeedSequence([seed, position]).generate_state(1)[0])


def expand_with_augmentations(
    index: DatasetIndex,
    indices: Sequence[int],
    seed: int = CONFIG['SEED']
) -> Tuple[DatasetIndex, List[int]]:
    """
    Aggiunge 4 campioni virtuali (uno per trasformazione) per ogni indice dato.

    Returns:
        (nuovo DatasetIndex con gli originali in testa, indici originali + virtuali)
    """
    samples = list(index.samples)
    expanded = list(indices)
    for i in indices:
        source = index.samples[i]
        aug_seed = _sample_seed(seed, i)
        for kind in CONFIG['AUGMENT_KINDS']:
            expanded.append(len(samples))
            samples.append(replace(source, augmentation=kind, aug_seed=aug_seed))

    logger.info(f"🔁 Augmentation: {len(indices)} → {len(expanded)} campioni")
    return DatasetIndex(samples=samples, class_names=list(index.class_names), root=index.root), expanded


def augment_dataset(index: DatasetIndex, out_dir: PathLike, seed: int = CONFIG['SEED']) -> DatasetIndex:
    """
    Materializza su disco il dataset 5x: originale + 4 trasformazioni per immagine,
    alla risoluzione nativa, in PNG.

    Returns:
        DatasetIndex della nuova directory
    """
    out = Path(out_dir)
    for position, sample in enumerate(index.samples):
        class_dir = out / sample.class_name
        ensure_dir_exists(class_dir)
        image = to_chw_unit(read_rgb(sample.path))
        stem = sample.path.stem
        Image.fromarray(to_uint8_hwc(image)).save(class_dir / f"{stem}.png")
        aug_seed = _sample_seed(seed, position)
        for kind in CONFIG['AUGMENT_KINDS']:
            augmented = augment_one(image, kind, aug_seed)
            Image.fromarray(to_uint8_hwc(augmented)).save(class_dir / f"{stem}_{kind}.png")

    logger.info(f"💾 Dataset aumentato scritto in {out}")
    return scan_dataset(out)

# ============================================================================
# DATASET SINTETICO
# ============================================================================

_SYNTH_COLORS = [
    (0.9, 0.15, 0.15),
    (0.15, 0.85, 0.2),
    (0.2, 0.3, 0.95),
    (0.95, 0.85, 0.1),
    (0.85, 0.2, 0.85),
    (0.1, 0.85, 0.85),
]
_SYNTH_BACKGROUND = 0.1


def planted_quadrant(class_index: int) -> int:
    """Quadrante del pattern: 0 alto-sx, 1 alto-dx, 2 basso-sx, 3 basso-dx."""
    return class_index % 4


def quadrant_slices(quadrant: int, size: int) -> Tuple[slice, slice]:
    half = size // 2
    rows = slice(0, half) if quadrant < 2 else slice(half, size)
    cols = slice(0, half) if quadrant % 2 == 0 else slice(half, size)
    return rows, cols


def synth_image(class_index: int, rng: np.random.Generator, size: int, noise: float) -> np.ndarray:
    """Disco colorato nel quadrante della classe, con piccolo jitter, più rumore gaussiano."""
    quadrant = planted_quadrant(class_index)
    half = size // 2
    jitter = max(1, size // 32)
    center_y = (half // 2 if quadrant < 2 else half + half // 2) + rng.integers(-jitter, jitter + 1)
    center_x = (half // 2 if quadrant % 2 == 0 else half + half // 2) + rng.integers(-jitter, jitter + 1)
    radius = size / 8.0

    yy, xx = np.mgrid[0:size, 0:size]
    disk = (yy - center_y) ** 2 + (xx - center_x) ** 2 <= radius ** 2

    color = np.array(_SYNTH_COLORS[class_index % len(_SYNTH_COLORS)], dtype=np.float32)
    image = np.full((3, size, size), _SYNTH_BACKGROUND, dtype=np.float32)
    image[:, disk] = color[:, None]

    if noise > 0:
        image = image + rng.normal(0.0, noise, size=image.shape).astype(np.float32)
    return np.clip(image, 0.0, 1.0)


def synth_class_names(classes: int) -> List[str]:
    width = max(2, len(str(classes - 1)))
    return [f"class_{c:0{width}d}" for c in range(classes)]


def synth_dataset(
    out_dir: PathLike,
    classes: int = CONFIG['NUM_CLASSES'],
    per_class: int = 20,
    seed: int = CONFIG['SEED'],
    noise: float = CONFIG['SYNTH_NOISE'],
    size: int = CONFIG['INPUT_SIZE']
) -> DatasetIndex:
    """
    Scrive un dataset PNG deterministico: out_dir/class_XX/img_YYYY.png.

    Raises:
        DatasetError: classes < 2, per_class < 3, noise < 0, directory non scrivibile
    """
    if classes < 2:
        raise DatasetError(f"Servono almeno 2 classi, richieste {classes}")
    if per_class < CONFIG['MIN_SAMPLES_PER_CLASS']:
        raise DatasetError(
            f"per_class {per_class} < {CONFIG['MIN_SAMPLES_PER_CLASS']} (split stratificato impossibile)"
        )
    if noise < 0:
        raise DatasetError(f"noise deve essere >= 0, ricevuto {noise}")

    out = Path(out_dir)
    try:
        for class_index, name in enumerate(synth_class_names(classes)):
            class_dir = out / name
            ensure_dir_exists(class_dir)
            for i in range(per_class):
                rng = np.random.default_rng([seed, class_index, i])
                image = synth_image(class_index, rng, size, noise)
                Image.fromarray(to_uint8_hwc(image)).save(class_dir / f"img_{i:04d}.png")
    except OSError as e:
        raise DatasetError(f"Directory non scrivibile: {out} ({e})") from e

    logger.info(f"🧪 Dataset sintetico: {classes} classi x {per_class} immagini in {out}")
    return scan_dataset(out)

# ============================================================================
# BATCH LOADING
# ============================================================================

class BatchLoader:
    """
    Decode parallelo con ordine di output deterministico.

    Le immagini base (senza augmentation) restano in cache se il dataset
    non supera IMAGE_CACHE_MAX campioni.
    """

    def __init__(
        self,
        index: DatasetIndex,
        image_size: int = CONFIG['INPUT_SIZE'],
        threads: Optional[int] = None
    ):
        self.index = index
        self.image_size = image_size
        self.threads = get_thread_count(threads)
        self.use_cache = len(index) <= CONFIG['IMAGE_CACHE_MAX']
        self._cache: Dict[str, np.ndarray] = {}

    def _decode(self, position: int) -> np.ndarray:
        sample = self.index.samples[position]
        key = str(sample.path)
        base = self._cache.get(key) if self.use_cache else None
        if base is None:
            base = to_chw_unit(resize_bilinear(read_rgb(sample.path), self.image_size))
            if self.use_cache:
                self._cache[key] = base
        if sample.augmentation:
            return augment_one(base, sample.augmentation, sample.aug_seed)
        return base

    def load(self, positions: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """
        Returns:
            (immagini (B, 3, S, S) float32, etichette (B,) int64)
        """
        if self.threads > 1 and len(positions) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                images = list(pool.map(self._decode, positions))
        else:
            images = [self._decode(p) for p in positions]
        return np.stack(images).astype(np.float32), self.index.labels(positions)

    def iter_batches(self, batches: Sequence[Sequence[int]]) -> Iterator[Tuple[Tensor, np.ndarray]]:
        for positions in batches:
            images, labels = self.load(positions)
            yield Tensor(images), labels


def load_batch(
    index: DatasetIndex,
    positions: Sequence[int],
    image_size: int = CONFIG['INPUT_SIZE'],
    threads: Optional[int] = None
) -> Tuple[Tensor, np.ndarray]:
    """Forma funzionale di BatchLoader.load, senza cache persistente."""
    images, labels = BatchLoader(index, image_size, threads).load(positions)
    return Tensor(images), labels
