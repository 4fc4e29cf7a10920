# -*- coding: utf-8 -*-
"""
============================================================================
CBAMNET - Leaf Disease Classification Engine
Neural Network Layers Module
============================================================================
Layer differenziabili della rete:
- Conv2D (cross-correlazione, same/valid padding, senza bias di default)
- BatchNorm2D (statistiche di batch in train, running stats in infer)
- MaxPool2D 2x2 stride 2, pooling globali medio e massimo
- Dense (x · Wᵀ + b), Dropout invertito
- Softmax stabile e categorical cross-entropy

Ogni layer espone forward(x), parameters(), buffers(), set_mode().
Le funzioni *_forward sono la forma funzionale usata dai layer.
============================================================================
"""

import logging
from typing import List, Optional, Sequence, Union

import numpy as np

from config import CONFIG
from tensor_autodiff import (
    NonFiniteError,
    Parameter,
    ShapeError,
    Tensor,
    add,
    make_result,
    matmul,
    max_spatial,
    mean_spatial,
    relu,
)

logger = logging.getLogger(__name__)

MODES = ("train", "infer")

# ============================================================================
# ERRORI
# ============================================================================

class LayerConfigError(ValueError):
    """Configurazione di layer non valida (kernel pari, rate fuori range, modo sconosciuto)."""


class StatisticsNotReadyError(RuntimeError):
    """BatchNorm in inferenza senza running statistics."""


class LabelError(ValueError):
    """Etichette non one-hot passate alla loss."""

# ============================================================================
# INIZIALIZZAZIONE
# ============================================================================

def he_normal(shape: Sequence[int], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """He-normal: N(0, 2/fan_in), adatta a blocchi con ReLU."""
    std = np.sqrt(2.0 / max(1, fan_in))
    return (rng.standard_normal(shape) * std).astype(np.float32)

# ============================================================================
# BASE LAYER
# ============================================================================

class Layer:
    """Base comune: nome, modo train/infer, registro parametri."""

    kind = "layer"

    def __init__(self, name: str):
        self.name = name
        self.mode = "train"

    def forward(self, x: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)

    def parameters(self) -> List[Parameter]:
        return []

    def buffers(self) -> List[Parameter]:
        return []

    def set_mode(self, mode: str) -> None:
        if mode not in MODES:
            raise LayerConfigError(f"Modo sconosciuto {mode!r} per {self.name} (ammessi: {MODES})")
        self.mode = mode

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, mode={self.mode!r})"

# ============================================================================
# CONV2D
# ============================================================================

class Conv2DLayer(Layer):
    """
    Convoluzione 2D (cross-correlazione).

    Args:
        in_channels, out_channels: canali di input/output
        kernel_size: lato k del kernel quadrato (dispari con same padding)
        name: prefisso dei parametri (es. "block1.conv1")
        rng: Generator per l'inizializzazione He-normal
        stride: passo (>= 1)
        padding_mode: "same" | "valid"
        use_bias: aggiunge un bias per canale (assente nei blocchi: lo assorbe la BatchNorm)
    """

    kind = "conv2d"

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        name: str,
        rng: Optional[np.random.Generator] = None,
        stride: int = 1,
        padding_mode: str = "same",
        use_bias: bool = False
    ):
        super().__init__(name)
        if padding_mode not in ("same", "valid"):
            raise LayerConfigError(f"padding_mode sconosciuto: {padding_mode!r}")
        if padding_mode == "same" and kernel_size % 2 == 0:
            raise LayerConfigError(f"Kernel {kernel_size} pari: same padding non simmetrico ({name})")
        if kernel_size < 1 or stride < 1 or in_channels < 1 or out_channels < 1:
            raise LayerConfigError(
                f"Estensioni non valide per {name}: in={in_channels} out={out_channels} "
                f"k={kernel_size} stride={stride}"
            )

        rng = rng if rng is not None else np.random.default_rng(CONFIG['SEED'])
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding_mode = padding_mode
        self.padding = (kernel_size - 1) // 2 if padding_mode == "same" else 0

        fan_in = in_channels * kernel_size * kernel_size
        self.weight = Parameter(
            he_normal((out_channels, in_channels, kernel_size, kernel_size), fan_in, rng),
            name=f"{name}.weight"
        )
        self.bias = Parameter(np.zeros(out_channels), name=f"{name}.bias") if use_bias else None

    def forward(self, x: Tensor) -> Tensor:
        return conv2d_forward(self, x)

    def parameters(self) -> List[Parameter]:
        return [self.weight] + ([self.bias] if self.bias is not None else [])


def conv2d_forward(layer: Conv2DLayer, x: Tensor) -> Tensor:
    """
    Forward della convoluzione per accumulo di spostamenti.

    Per ogni offset (i, j) del kernel, una GEMM (tensordot) tra la finestra
    traslata dell'input paddato e la fetta W[:, :, i, j]. Equivalente a
    im2col senza materializzare la matrice delle colonne.

    Raises:
        ShapeError: canali incompatibili o input più piccolo del kernel (valid)
    """
    n, c, h, w = x.shape
    if c != layer.in_channels:
        raise ShapeError(
            f"{layer.name}: attesi {layer.in_channels} canali in input, ricevuti {c} (shape {x.shape})"
        )

    k, s, p = layer.kernel_size, layer.stride, layer.padding
    if h + 2 * p < k or w + 2 * p < k:
        raise ShapeError(f"{layer.name}: input {h}x{w} più piccolo del kernel {k}x{k}")

    out_h = (h + 2 * p - k) // s + 1
    out_w = (w + 2 * p - k) // s + 1
    weight = layer.weight.data
    padded = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data

    def window(i: int, j: int) -> tuple:
        return (
            slice(None),
            slice(None),
            slice(i, i + s * (out_h - 1) + 1, s),
            slice(j, j + s * (out_w - 1) + 1, s),
        )

    # Accumulo in layout (N, H', W', C_out)
    acc = np.zeros((n, out_h, out_w, layer.out_channels), dtype=np.result_type(x.dtype, weight.dtype))
    for i in range(k):
        for j in range(k):
            acc += np.tensordot(padded[window(i, j)], weight[:, :, i, j], axes=([1], [1]))

    out = acc.transpose(0, 3, 1, 2)
    parents = [x, layer.weight]
    if layer.bias is not None:
        out = out + layer.bias.data.reshape(1, -1, 1, 1)
        parents.append(layer.bias)

    def backward_fn(g):
        g_last = g.transpose(0, 2, 3, 1)
        grad_x = grad_w = grad_b = None

        if x.requires_grad:
            grad_padded = np.zeros(padded.shape, dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    contrib = np.tensordot(g_last, weight[:, :, i, j], axes=([3], [0]))
                    grad_padded[window(i, j)] += contrib.transpose(0, 3, 1, 2)
            grad_x = grad_padded[:, :, p:p + h, p:p + w] if p else grad_padded

        if layer.weight.requires_grad:
            grad_w = np.zeros_like(weight)
            for i in range(k):
                for j in range(k):
                    grad_w[:, :, i, j] = np.tensordot(g, padded[window(i, j)], axes=([0, 2, 3], [0, 2, 3]))

        if layer.bias is not None and layer.bias.requires_grad:
            grad_b = g.sum(axis=(0, 2, 3)).reshape(layer.bias.shape)

        grads = [grad_x, grad_w]
        if layer.bias is not None:
            grads.append(grad_b)
        return grads

    return make_result(np.ascontiguousarray(out), parents, "conv2d", backward_fn)

# ============================================================================
# BATCH NORMALIZATION
# ============================================================================

class BatchNorm2DLayer(Layer):
    """
    Batch normalization per canale.

    Running stats: new = momentum * old + (1 - momentum) * batch.
    Partono da media 0 / varianza 1 ma restano "non pronte" finché un
    forward in train non le aggiorna o il checkpoint non le carica.
    """

    kind = "batchnorm2d"

    def __init__(
        self,
        num_channels: int,
        name: str,
        momentum: float = CONFIG['BN_MOMENTUM'],
        epsilon: float = CONFIG['BN_EPSILON']
    ):
        super().__init__(name)
        if not 0.0 < momentum < 1.0:
            raise LayerConfigError(f"{name}: momentum fuori da (0,1): {momentum}")
        if epsilon <= 0:
            raise LayerConfigError(f"{name}: epsilon deve essere > 0: {epsilon}")

        self.num_channels = num_channels
        self.momentum = momentum
        self.epsilon = epsilon
        self.gamma = Parameter(np.ones(num_channels), name=f"{name}.gamma")
        self.beta = Parameter(np.zeros(num_channels), name=f"{name}.beta")
        self.running_mean = Parameter(np.zeros(num_channels), name=f"{name}.running_mean", kind="buffer")
        self.running_var = Parameter(np.ones(num_channels), name=f"{name}.running_var", kind="buffer")
        self.stats_initialized = False

    def forward(self, x: Tensor) -> Tensor:
        return batchnorm2d_forward(self, x)

    def parameters(self) -> List[Parameter]:
        return [self.gamma, self.beta]

    def buffers(self) -> List[Parameter]:
        return [self.running_mean, self.running_var]


def batchnorm2d_forward(layer: BatchNorm2DLayer, x: Tensor) -> Tensor:
    """
    Forward BatchNorm fuso con backward analitico.

    Raises:
        ShapeError: canali incompatibili
        StatisticsNotReadyError: modo infer senza statistiche disponibili
    """
    n, c, h, w = x.shape
    if c != layer.num_channels:
        raise ShapeError(f"{layer.name}: attesi {layer.num_channels} canali, ricevuti {c}")

    gamma = layer.gamma.data
    beta = layer.beta.data

    if layer.mode == "train":
        count = n * h * w
        if count < 1:
            raise ShapeError(f"{layer.name}: batch vuoto {x.shape}")
        mean = x.data.mean(axis=(0, 2, 3), keepdims=True)
        var = x.data.var(axis=(0, 2, 3), keepdims=True)

        m = layer.momentum
        layer.running_mean.data[...] = m * layer.running_mean.data + (1.0 - m) * mean
        layer.running_var.data[...] = m * layer.running_var.data + (1.0 - m) * var
        layer.stats_initialized = True
    else:
        if not layer.stats_initialized:
            raise StatisticsNotReadyError(
                f"{layer.name}: running statistics non disponibili (serve un forward in train o un checkpoint)"
            )
        count = None
        mean = layer.running_mean.data
        var = layer.running_var.data

    inv_std = 1.0 / np.sqrt(var + layer.epsilon)
    x_hat = (x.data - mean) * inv_std
    out = gamma * x_hat + beta

    def backward_fn(g):
        grad_gamma = (g * x_hat).sum(axis=(0, 2, 3), keepdims=True) if layer.gamma.requires_grad else None
        grad_beta = g.sum(axis=(0, 2, 3), keepdims=True) if layer.beta.requires_grad else None

        grad_x = None
        if x.requires_grad:
            g_hat = g * gamma
            if count is None:
                grad_x = g_hat * inv_std
            else:
                sum_g = g_hat.sum(axis=(0, 2, 3), keepdims=True)
                sum_gx = (g_hat * x_hat).sum(axis=(0, 2, 3), keepdims=True)
                grad_x = (inv_std / count) * (count * g_hat - sum_g - x_hat * sum_gx)

        return grad_x, grad_gamma, grad_beta

    return make_result(out.astype(x.dtype, copy=False), (x, layer.gamma, layer.beta), "batchnorm2d", backward_fn)

# ============================================================================
# POOLING
# ============================================================================

def maxpool2d(x: Tensor, window: int = 2, stride: int = 2) -> Tensor:
    """
    Max pooling a finestre non sovrapposte (window == stride), senza padding.

    Il gradiente va alla prima posizione di massimo (row-major) di ogni finestra.

    Raises:
        LayerConfigError: window != stride
        ShapeError: estensioni non divisibili per la finestra
    """
    if window != stride or window < 1:
        raise LayerConfigError(f"maxpool2d supporta solo finestre non sovrapposte, window={window} stride={stride}")

    n, c, h, w = x.shape
    if h % window or w % window:
        raise ShapeError(f"maxpool2d: estensioni {h}x{w} non divisibili per {window} (nessun padding implicito)")

    oh, ow = h // window, w // window
    # (N, C, OH, OW, window*window) con le posizioni della finestra in ordine row-major
    patches = (
        x.data.reshape(n, c, oh, window, ow, window)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, oh, ow, window * window)
    )
    argmax = patches.argmax(axis=4)[..., None]
    out = np.take_along_axis(patches, argmax, axis=4)[..., 0]

    def backward_fn(g):
        grad_patches = np.zeros(patches.shape, dtype=g.dtype)
        np.put_along_axis(grad_patches, argmax, g[..., None], axis=4)
        grad = (
            grad_patches.reshape(n, c, oh, ow, window, window)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h, w)
        )
        return (grad,)

    return make_result(out, (x,), "maxpool2d", backward_fn)


def global_avg_pool(x: Tensor) -> Tensor:
    """Media spaziale per canale → (N, C, 1, 1)."""
    return mean_spatial(x)


def global_max_pool(x: Tensor) -> Tensor:
    """Massimo spaziale per canale → (N, C, 1, 1), gradiente al primo argmax."""
    return max_spatial(x)


class ReLULayer(Layer):
    kind = "relu"

    def forward(self, x: Tensor) -> Tensor:
        return relu(x)


class MaxPool2DLayer(Layer):
    kind = "maxpool2d"

    def __init__(self, name: str, window: int = 2):
        super().__init__(name)
        self.window = window

    def forward(self, x: Tensor) -> Tensor:
        return maxpool2d(x, self.window, self.window)


class GlobalAvgPoolLayer(Layer):
    kind = "global_avg_pool"

    def forward(self, x: Tensor) -> Tensor:
        return global_avg_pool(x)

# ============================================================================
# DENSE
# ============================================================================

class DenseLayer(Layer):
    """Fully connected: x vista (N, in) → (N, out), weight (out, in)."""

    kind = "dense"

    def __init__(
        self,
        in_features: int,
        out_features: int,
        name: str,
        rng: Optional[np.random.Generator] = None
    ):
        super().__init__(name)
        if in_features < 1 or out_features < 1:
            raise LayerConfigError(f"{name}: estensioni non valide {in_features} → {out_features}")

        rng = rng if rng is not None else np.random.default_rng(CONFIG['SEED'])
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(he_normal((out_features, in_features), in_features, rng), name=f"{name}.weight")
        self.bias = Parameter(np.zeros(out_features), name=f"{name}.bias")

    def forward(self, x: Tensor) -> Tensor:
        return dense_forward(self, x)

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]


def dense_forward(layer: DenseLayer, x: Tensor) -> Tensor:
    """
    x · Wᵀ + b.

    Raises:
        ShapeError: fan-in diverso da in_features
    """
    fan_in = x.size // x.shape[0]
    if fan_in != layer.in_features:
        raise ShapeError(f"{layer.name}: fan-in atteso {layer.in_features}, ricevuto {fan_in} (shape {x.shape})")
    return add(matmul(x, layer.weight, transpose_b=True), layer.bias)

# ============================================================================
# DROPOUT
# ============================================================================

def _check_rate(rate: float) -> None:
    if not 0.0 <= rate < 1.0:
        raise LayerConfigError(f"Dropout rate fuori da [0,1): {rate}")


class DropoutLayer(Layer):
    """
    Dropout invertito.

    La maschera dipende solo da (seed, contatore di invocazioni in train):
    due run con lo stesso seed producono le stesse maschere.
    """

    kind = "dropout"

    def __init__(self, rate: float, name: str, seed: int = CONFIG['SEED']):
        super().__init__(name)
        _check_rate(rate)
        self.rate = float(rate)
        self.rng_seed = int(seed)
        self.counter = 0

    def forward(self, x: Tensor) -> Tensor:
        return dropout_forward(self, x)


def dropout_forward(layer: DropoutLayer, x: Tensor) -> Tensor:
    """Train: azzera con probabilità rate e scala per 1/(1-rate). Infer: identità."""
    _check_rate(layer.rate)
    if layer.mode == "infer" or layer.rate == 0.0:
        return x

    rng = np.random.default_rng([layer.rng_seed, layer.counter])
    layer.counter += 1

    keep = 1.0 - layer.rate
    mask = (rng.random(x.shape) >= layer.rate).astype(x.dtype) / keep

    def backward_fn(g):
        return (g * mask,)

    return make_result(x.data * mask, (x,), "dropout", backward_fn)

# ============================================================================
# SOFTMAX / CROSS-ENTROPY
# ============================================================================

def softmax(logits: Tensor) -> Tensor:
    """
    Softmax per riga sulla vista (N, K), con sottrazione del massimo.

    Returns:
        Tensor (N, K, 1, 1) con righe positive a somma 1

    Raises:
        NonFiniteError: logit NaN/Inf
    """
    z = logits.matrix_view()
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("softmax: logit non finiti")

    shifted = z - z.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)

    def backward_fn(g):
        g_mat = g.reshape(probs.shape)
        grad = probs * (g_mat - (g_mat * probs).sum(axis=1, keepdims=True))
        return (grad.reshape(logits.shape),)

    return make_result(probs.reshape(probs.shape[0], probs.shape[1], 1, 1), (logits,), "softmax", backward_fn)


def one_hot(labels: Sequence[int], num_classes: int) -> np.ndarray:
    """Etichette intere → matrice one-hot (N, K) float32."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelError(f"Etichette fuori da [0, {num_classes}): {labels.min()}..{labels.max()}")
    encoded = np.zeros((labels.size, num_classes), dtype=np.float32)
    encoded[np.arange(labels.size), labels] = 1.0
    return encoded


def cross_entropy_loss(
    probs: Tensor,
    labels: Union[np.ndarray, Tensor],
    log_floor: float = CONFIG['LOG_FLOOR']
) -> Tensor:
    """
    Categorical cross-entropy media sul batch: -mean_n Σ_k y_k log max(p_k, floor).

    Raises:
        ShapeError: shape di probs e labels diverse
        LabelError: labels non one-hot
    """
    p = probs.matrix_view()
    y = labels.matrix_view() if isinstance(labels, Tensor) else np.asarray(labels, dtype=np.float64)
    y = y.reshape(y.shape[0], -1)

    if y.shape != p.shape:
        raise ShapeError(f"cross_entropy_loss: probs {p.shape} vs labels {y.shape}")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise LabelError("cross_entropy_loss: le etichette devono essere one-hot")

    n = p.shape[0]
    clamped = np.maximum(p, log_floor)
    loss = -(y * np.log(clamped)).sum() / n

    def backward_fn(g):
        scale_ = float(g.reshape(-1)[0]) / n
        grad = np.where(p > log_floor, -y / clamped, 0.0) * scale_
        return (grad.astype(probs.dtype).reshape(probs.shape),)

    return make_result(np.array(loss, dtype=probs.dtype).reshape(1, 1, 1, 1), (probs,), "cross_entropy", backward_fn)
