# -*- coding: utf-8 -*-
"""
============================================================================
CBAMNET - Leaf Disease Classification Engine
Model Assembly Module
============================================================================
Assemblaggio della rete:

  Block x4:  Conv-BN-ReLU, Conv-BN-ReLU, CBAM, MaxPool 2x2
             (32 filtri 7x7, 64 5x5, 128 3x3, 256 3x3)
  Head:      GAP → Dense(1024)+ReLU+Dropout → Dense(512)+ReLU+Dropout → Dense(K)

Softmax non fa parte del modello: la applicano loss e valutazione.

Checkpoint "CBLF":
  magic (4 byte) | version u32 LE | header_len u32 LE | header JSON UTF-8 |
  payload float32 little-endian, tensori concatenati in ordine di header
============================================================================
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from cbam_attention import CBAMBlock
from config import CONFIG
from nn_layers import (
    BatchNorm2DLayer,
    Conv2DLayer,
    DenseLayer,
    DropoutLayer,
    GlobalAvgPoolLayer,
    Layer,
    MaxPool2DLayer,
    ReLULayer,
)
from tensor_autodiff import GradientMap, Parameter, Tensor, backward, zero_grad
from utils import ensure_parent_dir, format_bytes, format_large_number, format_number

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# ============================================================================
# ERRORI
# ============================================================================

class ModelSpecError(ValueError):
    """Specifica di modello che viola un vincolo strutturale."""


class InputShapeError(ValueError):
    """Input con estensioni diverse da (N, 3, S, S)."""


class CheckpointError(Exception):
    """Errore generico di lettura/scrittura checkpoint."""


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedPayloadError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    """Il tensore dichiarato nell'header non corrisponde al modello ricostruito."""

    def __init__(self, tensor_name: str, message: str):
        super().__init__(f"{tensor_name}: {message}")
        self.tensor_name = tensor_name

# ============================================================================
# SPECIFICA
# ============================================================================

@dataclass(frozen=True)
class BlockSpec:
    filters: int
    kernel: int


def _default_blocks() -> Tuple[BlockSpec, ...]:
    return tuple(BlockSpec(filters, kernel) for filters, kernel in CONFIG['BLOCKS'])


@dataclass(frozen=True)
class ModelSpec:
    """Iperparametri strutturali del modello (input quadrato RGB)."""
    input_size: int = CONFIG['INPUT_SIZE']
    blocks: Tuple[BlockSpec, ...] = field(default_factory=_default_blocks)
    head_units: Tuple[int, ...] = tuple(CONFIG['HEAD_UNITS'])
    num_classes: int = CONFIG['NUM_CLASSES']
    reduction_ratio: int = CONFIG['REDUCTION_RATIO']
    dropout_rate: float = CONFIG['DROPOUT_RATE']
    dropout_after: Tuple[bool, ...] = tuple(CONFIG['DROPOUT_AFTER'])
    mlp_bias: bool = CONFIG['MLP_BIAS']
    spatial_kernel: int = CONFIG['SPATIAL_KERNEL']

    @property
    def input_channels(self) -> int:
        return CONFIG['INPUT_CHANNELS']

    @property
    def input_shape(self) -> Tuple[int, int, int]:
        return (self.input_channels, self.input_size, self.input_size)

    def validate(self) -> None:
        """
        Raises:
            ModelSpecError: con il vincolo violato nel messaggio
        """
        if len(self.blocks) != 4:
            raise ModelSpecError(f"Servono esattamente 4 blocchi, trovati {len(self.blocks)}")
        if self.reduction_ratio < 1:
            raise ModelSpecError(f"reduction_ratio non positivo: {self.reduction_ratio}")
        for i, block in enumerate(self.blocks, 1):
            if block.filters < 1:
                raise ModelSpecError(f"block{i}: filtri non positivi ({block.filters})")
            if block.kernel < 1 or block.kernel % 2 == 0:
                raise ModelSpecError(f"block{i}: kernel {block.kernel} non dispari")
            if block.filters % self.reduction_ratio != 0:
                raise ModelSpecError(
                    f"block{i}: reduction ratio {self.reduction_ratio} non divide {block.filters} filtri"
                )
        if self.input_size < 16 or self.input_size % 16 != 0:
            raise ModelSpecError(f"input_size {self.input_size} deve essere multiplo positivo di 16")
        if self.num_classes < 2:
            raise ModelSpecError(f"num_classes deve essere >= 2, trovato {self.num_classes}")
        if any(units < 1 for units in self.head_units):
            raise ModelSpecError(f"head_units non positivi: {self.head_units}")
        if len(self.dropout_after) != len(self.head_units):
            raise ModelSpecError(
                f"dropout_after ({len(self.dropout_after)}) e head_units ({len(self.head_units)}) di lunghezza diversa"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelSpecError(f"dropout_rate fuori da [0,1): {self.dropout_rate}")
        if self.spatial_kernel < 1 or self.spatial_kernel % 2 == 0:
            raise ModelSpecError(f"spatial_kernel {self.spatial_kernel} non dispari")

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['blocks'] = [[b['filters'], b['kernel']] for b in data['blocks']]
        data['head_units'] = list(self.head_units)
        data['dropout_after'] = list(self.dropout_after)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ModelSpec":
        try:
            return cls(
                input_size=int(data['input_size']),
                blocks=tuple(BlockSpec(int(f), int(k)) for f, k in data['blocks']),
                head_units=tuple(int(u) for u in data['head_units']),
                num_classes=int(data['num_classes']),
                reduction_ratio=int(data['reduction_ratio']),
                dropout_rate=float(data['dropout_rate']),
                dropout_after=tuple(bool(d) for d in data['dropout_after']),
                mlp_bias=bool(data.get('mlp_bias', True)),
                spatial_kernel=int(data.get('spatial_kernel', CONFIG['SPATIAL_KERNEL'])),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ModelSpecError(f"Specifica non leggibile: {e}") from e

# ============================================================================
# MODELLO
# ============================================================================

class Model:
    """
    Rete assemblata: sequenza ordinata di layer e registro dei parametri.

    Attributes:
        spec: ModelSpec
        layers: lista ordinata dei layer eseguibili
        registry: nome → Parameter (parametri e buffer, in ordine di registrazione)
        mode: "train" | "infer"
        metadata: informazioni di training salvate nel checkpoint
    """

    def __init__(self, spec: ModelSpec, layers: List[Layer]):
        self.spec = spec
        self.layers = layers
        self.mode = "train"
        self.metadata: Dict[str, Any] = {}
        self.registry: Dict[str, Parameter] = {}

        for layer in layers:
            for tensor in layer.parameters() + layer.buffers():
                if tensor.name in self.registry:
                    raise ModelSpecError(f"Nome parametro duplicato: {tensor.name}")
                self.registry[tensor.name] = tensor

        self.capture_points = {f"block{i}": f"block{i}.cbam" for i in range(1, 5)}
        self._layer_index = {layer.name: i for i, layer in enumerate(layers)}
        self.output_shapes = self._infer_output_shapes()

    # --- registro ---

    def parameters(self) -> List[Parameter]:
        return [p for p in self.registry.values() if p.trainable]

    def buffers(self) -> List[Parameter]:
        return [p for p in self.registry.values() if not p.trainable]

    def named_tensors(self) -> List[Parameter]:
        return list(self.registry.values())

    def set_mode(self, mode: str) -> None:
        for layer in self.layers:
            layer.set_mode(mode)
        self.mode = mode

    def zero_grad(self) -> None:
        zero_grad(self.parameters())

    def gradient_map(self, loss: Tensor) -> GradientMap:
        """backward(loss) sul registro: ogni parametro compare esattamente una volta."""
        return backward(loss, self.parameters())

    def layer_names(self) -> List[str]:
        return [layer.name for layer in self.layers]

    def resolve_capture(self, name: str) -> Optional[int]:
        """Indice del layer il cui output corrisponde a name (blocco o layer), None se sconosciuto."""
        return self._layer_index.get(self.capture_points.get(name, name))

    def __call__(self, x: Tensor) -> Tensor:
        return forward(self, x)

    # --- shape statiche ---

    def _infer_output_shapes(self) -> Dict[str, Tuple[int, ...]]:
        channels, size = self.spec.input_channels, self.spec.input_size
        features = None
        shapes: Dict[str, Tuple[int, ...]] = {}
        for layer in self.layers:
            if isinstance(layer, Conv2DLayer):
                channels = layer.out_channels
            elif isinstance(layer, MaxPool2DLayer):
                size //= layer.window
            elif isinstance(layer, GlobalAvgPoolLayer):
                features = channels
            elif isinstance(layer, DenseLayer):
                features = layer.out_features
            shapes[layer.name] = (features,) if features is not None else (channels, size, size)
        return shapes


def _dropout_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def build_model(spec: Optional[ModelSpec] = None, seed: int = CONFIG['SEED']) -> Model:
    """
    Costruisce il modello con inizializzazione deterministica.

    Pesi conv/dense He-normal, gamma=1, beta=0, bias a zero; un solo
    Generator consuma i valori in ordine di registrazione.

    Raises:
        ModelSpecError: specifica non valida
    """
    spec = spec if spec is not None else ModelSpec()
    spec.validate()
    rng = np.random.default_rng(seed)

    layers: List[Layer] = []
    in_channels = spec.input_channels

    for i, block in enumerate(spec.blocks, 1):
        prefix = f"block{i}"
        for j in (1, 2):
            layers.append(Conv2DLayer(in_channels, block.filters, block.kernel, f"{prefix}.conv{j}", rng=rng))
            layers.append(BatchNorm2DLayer(block.filters, f"{prefix}.bn{j}"))
            layers.append(ReLULayer(f"{prefix}.relu{j}"))
            in_channels = block.filters
        layers.append(CBAMBlock(
            block.filters,
            f"{prefix}.cbam",
            reduction_ratio=spec.reduction_ratio,
            rng=rng,
            mlp_bias=spec.mlp_bias,
            spatial_kernel=spec.spatial_kernel,
        ))
        layers.append(MaxPool2DLayer(f"{prefix}.pool"))

    layers.append(GlobalAvgPoolLayer("head.gap"))
    features = in_channels
    for i, (units, with_dropout) in enumerate(zip(spec.head_units, spec.dropout_after), 1):
        layers.append(DenseLayer(features, units, f"head.dense{i}", rng=rng))
        layers.append(ReLULayer(f"head.relu{i}"))
        if with_dropout:
            layers.append(DropoutLayer(spec.dropout_rate, f"head.dropout{i}", seed=_dropout_seed(seed, i)))
        features = units
    layers.append(DenseLayer(features, spec.num_classes, "head.logits", rng=rng))

    model = Model(spec, layers)
    model.metadata['seed'] = int(seed)
    logger.debug(f"Modello costruito: {len(layers)} layer, {len(model.registry)} tensori registrati")
    return model


def forward(
    model: Model,
    x: Tensor,
    capture: Optional[str] = None
) -> Union[Tensor, Tuple[Tensor, Tensor]]:
    """
    Forward fino ai logit (N, K, 1, 1).

    Args:
        model: Model
        x: batch (N, 3, S, S)
        capture: nome di blocco ("block1".."block4") o di layer; se dato,
                 ritorna anche l'output di quel punto con retain_grad attivo

    Raises:
        InputShapeError: estensioni di input diverse da quelle di ModelSpec
        KeyError: capture sconosciuto
    """
    expected = model.spec.input_shape
    if x.shape[1:] != expected or x.shape[0] < 1:
        raise InputShapeError(f"Input atteso (N, {', '.join(map(str, expected))}), ricevuto {x.shape}")

    capture_index = None
    if capture is not None:
        capture_index = model.resolve_capture(capture)
        if capture_index is None:
            raise KeyError(capture)

    captured = None
    out = x
    for i, layer in enumerate(model.layers):
        out = layer.forward(out)
        if i == capture_index:
            captured = out.retain_grad()

    if capture is not None:
        return out, captured
    return out

# ============================================================================
# CONTEGGIO PARAMETRI
# ============================================================================

def expected_recipe(spec: ModelSpec) -> List[str]:
    """Sequenza di tipi di layer attesa per la spec."""
    block = ["conv2d", "batchnorm2d", "relu", "conv2d", "batchnorm2d", "relu", "cbam", "maxpool2d"]
    recipe = block * len(spec.blocks) + ["global_avg_pool"]
    for with_dropout in spec.dropout_after:
        recipe += ["dense", "relu"] + (["dropout"] if with_dropout else [])
    return recipe + ["dense"]


def architecture_recipe(model: Model) -> List[str]:
    """Sequenza effettiva dei tipi di layer (audit strutturale)."""
    return [layer.kind for layer in model.layers]


@dataclass
class ParameterCount:
    table: pd.DataFrame
    trainable: int
    buffers: int

    @property
    def total(self) -> int:
        return self.trainable + self.buffers

    @property
    def bytes(self) -> int:
        return 4 * self.total

    @property
    def mib(self) -> float:
        return self.bytes / (1024 * 1024)

    def totals(self) -> Dict[str, Any]:
        return {
            'trainable': self.trainable,
            'buffers': self.buffers,
            'total': self.total,
            'bytes': self.bytes,
            'mib': round(self.mib, 4),
        }

    def summary(self) -> str:
        return (
            f"Parametri: {format_number(self.total)} ({format_large_number(self.total)}) "
            f"(addestrabili {format_number(self.trainable)}, buffer {format_number(self.buffers)}) "
            f"- {format_bytes(self.bytes)}"
        )


def count_parameters(model: Model) -> ParameterCount:
    """
    Tabella per layer (pandas) + totali.

    Colonne: layer, kind, output_shape, trainable, buffers, total.
    """
    rows = []
    for layer in model.layers:
        trainable = sum(p.size for p in layer.parameters())
        buffers = sum(b.size for b in layer.buffers())
        rows.append({
            'layer': layer.name,
            'kind': layer.kind,
            'output_shape': "x".join(str(d) for d in model.output_shapes[layer.name]),
            'trainable': trainable,
            'buffers': buffers,
            'total': trainable + buffers,
        })

    table = pd.DataFrame(rows, columns=['layer', 'kind', 'output_shape', 'trainable', 'buffers', 'total'])
    return ParameterCount(
        table=table,
        trainable=int(sum(p.size for p in model.parameters())),
        buffers=int(sum(b.size for b in model.buffers())),
    )

# ============================================================================
# CHECKPOINT
# ============================================================================

_PREFIX_BYTES = 12  # magic + version + header_len


def pack_checkpoint(header: Dict[str, Any], payload: bytes) -> bytes:
    """Contenitore CBLF: magic, versione, lunghezza header, header JSON, payload."""
    header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
    prefix = np.array([CONFIG['CHECKPOINT_VERSION'], len(header_bytes)], dtype='<u4').tobytes()
    return CONFIG['CHECKPOINT_MAGIC'] + prefix + header_bytes + payload


def unpack_checkpoint(raw: bytes) -> Tuple[Dict[str, Any], bytes]:
    """
    Separa header e payload di un checkpoint.

    Raises:
        BadMagicError, VersionMismatchError, TruncatedPayloadError, CheckpointError
    """
    if len(raw) < 4 or raw[:4] != CONFIG['CHECKPOINT_MAGIC']:
        raise BadMagicError(f"Magic non valido: {raw[:4]!r} (atteso {CONFIG['CHECKPOINT_MAGIC']!r})")
    if len(raw) < _PREFIX_BYTES:
        raise TruncatedPayloadError(f"File troncato: {len(raw)} byte, prefisso incompleto")

    version, header_len = (int(v) for v in np.frombuffer(raw[4:_PREFIX_BYTES], dtype='<u4'))
    if version != CONFIG['CHECKPOINT_VERSION']:
        raise VersionMismatchError(
            f"Versione checkpoint {version} non supportata (attesa {CONFIG['CHECKPOINT_VERSION']})"
        )
    if len(raw) < _PREFIX_BYTES + header_len:
        raise TruncatedPayloadError(f"Header troncato: dichiarati {header_len} byte")

    try:
        header = json.loads(raw[_PREFIX_BYTES:_PREFIX_BYTES + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Header JSON non leggibile: {e}") from e

    return header, raw[_PREFIX_BYTES + header_len:]


def read_checkpoint_header(path: PathLike) -> Dict[str, Any]:
    """Legge solo l'header (usato da inspect e dai controlli di compatibilità)."""
    header, _ = unpack_checkpoint(Path(path).read_bytes())
    return header


def save_checkpoint(model: Model, path: PathLike, metadata: Optional[Dict[str, Any]] = None) -> int:
    """
    Serializza spec, metadati e tutti i tensori (parametri + running stats).

    Args:
        model: Model da salvare
        path: file di destinazione
        metadata: chiavi aggiuntive unite a model.metadata

    Returns:
        Dimensione del file in byte
    """
    if metadata:
        model.metadata.update(metadata)

    tensors = []
    chunks = []
    offset = 0
    for name, tensor in model.registry.items():
        data = np.ascontiguousarray(tensor.data, dtype='<f4')
        tensors.append({
            'name': name,
            'shape': list(tensor.shape),
            'offset': offset,
            'kind': tensor.kind,
        })
        chunks.append(data.tobytes())
        offset += data.nbytes

    header = {
        'spec': model.spec.to_dict(),
        'tensors': tensors,
        'metadata': model.metadata,
    }

    raw = pack_checkpoint(header, b"".join(chunks))
    ensure_parent_dir(path)
    Path(path).write_bytes(raw)
    logger.info(f"💾 Checkpoint salvato: {path} ({format_bytes(len(raw))}, {len(tensors)} tensori)")
    return len(raw)


def load_checkpoint(path: PathLike) -> Model:
    """
    Ricostruisce il modello dall'header e carica i tensori bit-exact.

    Il modello ritorna in modo infer con le running stats disponibili.

    Raises:
        CheckpointError e sottoclassi (magic, versione, troncamento, shape)
    """
    header, payload = unpack_checkpoint(Path(path).read_bytes())

    try:
        spec = ModelSpec.from_dict(header['spec'])
        entries = list(header['tensors'])
    except (KeyError, TypeError, ModelSpecError) as e:
        raise CheckpointError(f"Header incompleto: {e}") from e

    metadata = dict(header.get('metadata') or {})
    model = build_model(spec, seed=int(metadata.get('seed', CONFIG['SEED'])))

    declared = sum(int(np.prod(e['shape'])) for e in entries) * 4
    if len(payload) < declared:
        raise TruncatedPayloadError(f"Payload troncato: {len(payload)} byte, dichiarati {declared}")
    if len(payload) > declared:
        raise CheckpointError(f"Payload con {len(payload) - declared} byte in eccesso")

    seen = set()
    for entry in entries:
        name = entry['name']
        tensor = model.registry.get(name)
        if tensor is None:
            raise ShapeMismatchError(name, "tensore non presente nel modello ricostruito")
        shape = tuple(int(d) for d in entry['shape'])
        if shape != tensor.shape:
            raise ShapeMismatchError(name, f"shape dichiarata {shape}, attesa {tensor.shape}")
        offset = int(entry['offset'])
        count = int(np.prod(shape))
        if offset < 0 or offset + 4 * count > len(payload):
            raise TruncatedPayloadError(f"{name}: offset {offset} oltre la fine del payload")
        values = np.frombuffer(payload, dtype='<f4', count=count, offset=offset)
        tensor.data[...] = values.reshape(shape)
        seen.add(name)

    missing = [name for name in model.registry if name not in seen]
    if missing:
        raise ShapeMismatchError(missing[0], "tensore del modello assente nel checkpoint")

    for layer in model.layers:
        if isinstance(layer, BatchNorm2DLayer):
            layer.stats_initialized = True

    model.metadata = metadata
    model.set_mode("infer")
    logger.info(f"📥 Checkpoint caricato: {path} ({len(entries)} tensori)")
    return model
