# -*- coding: utf-8 -*-
"""
============================================================================
CBAMNET - Leaf Disease Classification Engine
Tensor & Reverse-Mode Autodiff Module
============================================================================
Motore di differenziazione automatica (reverse mode) su tensori numpy
di rango 4 (N, C, H, W), row-major, float32 di default:

- Tensor / Parameter con buffer gradiente e nodo dell'operazione produttrice
- Operazioni elementwise con broadcasting su assi singoletto
  (prodotti (C,1,1)x(C,H,W) e (1,H,W)x(C,H,W) della CBAM)
- matmul (Dense, MLP condiviso della channel attention)
- Riduzioni: somma totale, media/max spaziali, media/max sui canali
- Concatenazione sui canali, reshape
- backward() con accumulo additivo sul fan-out → GradientMap
- finite_difference_check() per la verifica numerica dei gradienti

Il grafo è single-writer: costruito e differenziato da un solo thread.
============================================================================
"""

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from config import CONFIG

# ============================================================================
# LOGGING
# ============================================================================

logger = logging.getLogger(__name__)

# ============================================================================
# ERRORI
# ============================================================================

class ShapeError(ValueError):
    """Shape incompatibili per l'operazione richiesta."""


class NonFiniteError(FloatingPointError):
    """Valori NaN/Inf incontrati dove non ammessi."""

# ============================================================================
# STATO GLOBALE (grad mode, precisione)
# ============================================================================

_GRAD_ENABLED = True
_DEFAULT_DTYPE = np.dtype(CONFIG['DTYPE'])


@contextmanager
def no_grad() -> Iterator[None]:
    """Disabilita la costruzione del grafo (inferenza pura)."""
    global _GRAD_ENABLED
    previous, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


@contextmanager
def precision(dtype) -> Iterator[None]:
    """
    Cambia il dtype di default dei tensori creati nel blocco.

    Usato dai gradient check in float64; il modello lavora in float32.
    """
    global _DEFAULT_DTYPE
    previous, _DEFAULT_DTYPE = _DEFAULT_DTYPE, np.dtype(dtype)
    try:
        yield
    finally:
        _DEFAULT_DTYPE = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


def get_default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE

# ============================================================================
# TENSOR
# ============================================================================

ArrayLike = Union[np.ndarray, Sequence, float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _as_rank4(array: np.ndarray) -> np.ndarray:
    """
    Promuove un array a rango 4.

    (W,) → (1,W,1,1) vettore riga; (M,K) → (M,K,1,1) matrice;
    (C,H,W) → (1,C,H,W) singola feature map.
    """
    if array.ndim == 4:
        return array
    if array.ndim == 0:
        return array.reshape(1, 1, 1, 1)
    if array.ndim == 1:
        return array.reshape(1, array.shape[0], 1, 1)
    if array.ndim == 2:
        return array.reshape(array.shape[0], array.shape[1], 1, 1)
    if array.ndim == 3:
        return array.reshape(1, *array.shape)
    raise ShapeError(f"Rango {array.ndim} non supportato, shape {array.shape}")


@dataclass
class Node:
    """Record dell'operazione che ha prodotto un tensore."""
    op: str
    parents: Tuple["Tensor", ...]
    backward_fn: BackwardFn


class Tensor:
    """
    Array denso (N, C, H, W) che partecipa al grafo di differenziazione.

    Attributes:
        data: np.ndarray di rango 4
        requires_grad: True se il gradiente va propagato
        grad: buffer gradiente (stessa shape di data) o None
        node: operazione produttrice (None per le foglie)
        name: nome opzionale (i Parameter lo usano come chiave)
    """

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        name: str = "",
        dtype=None
    ):
        array = np.asarray(data, dtype=dtype if dtype is not None else _DEFAULT_DTYPE)
        self.data: np.ndarray = _as_rank4(array)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.node: Optional[Node] = None
        self.name = name
        self._retain_grad = False

    # --- proprietà ---

    @property
    def shape(self) -> Tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    def matrix_view(self) -> np.ndarray:
        """Vista (N, C*H*W) dei dati."""
        return self.data.reshape(self.shape[0], -1)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise ShapeError(f"item() richiede un tensore scalare, shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def retain_grad(self) -> "Tensor":
        """Conserva il gradiente di un tensore intermedio dopo backward()."""
        self._retain_grad = True
        return self

    # --- operatori ---

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, _wrap(other, self))

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, _wrap(other, self))

    def __mul__(self, other: Union["Tensor", float]) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        op = f" op={self.node.op}" if self.node else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}{op}, requires_grad={self.requires_grad})"


PARAMETER_KINDS = ("param", "buffer")


class Parameter(Tensor):
    """
    Tensore con nome univoco nel registro del modello.

    kind="param": addestrabile (riceve gradiente, aggiornato da Adam, i cui
    momenti vivono in trainer.AdamState indicizzati per nome).
    kind="buffer": stato non addestrabile (running stats della BatchNorm),
    salvato nel checkpoint ma escluso dall'ottimizzazione.
    """

    def __init__(self, data: ArrayLike, name: str, kind: str = "param", dtype=None):
        if kind not in PARAMETER_KINDS:
            raise ValueError(f"kind sconosciuto: {kind!r} (ammessi: {PARAMETER_KINDS})")
        super().__init__(data, requires_grad=(kind == "param"), name=name, dtype=dtype)
        self.kind = kind

    @property
    def trainable(self) -> bool:
        return self.kind == "param"


def _wrap(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.full((1, 1, 1, 1), value), dtype=like.dtype)


def make_result(
    data: np.ndarray,
    parents: Sequence[Tensor],
    op: str,
    backward_fn: BackwardFn
) -> Tensor:
    """
    Crea il tensore risultato di un'operazione e lo aggancia al grafo.

    Il nodo viene registrato solo se il grad mode è attivo e almeno
    un input richiede il gradiente.

    Args:
        data: risultato numerico
        parents: tensori di input, nell'ordine atteso da backward_fn
        op: nome dell'operazione
        backward_fn: g_out → gradienti per ciascun parent (None se non serve)

    Returns:
        Tensor risultato
    """
    out_dtype = np.result_type(*[p.dtype for p in parents]) if parents else _DEFAULT_DTYPE
    out = Tensor(data, dtype=out_dtype)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.node = Node(op=op, parents=tuple(parents), backward_fn=backward_fn)
    return out

# ============================================================================
# BROADCASTING
# ============================================================================

def check_broadcast(a_shape: Tuple[int, ...], b_shape: Tuple[int, ...]) -> None:
    """
    Verifica che b sia broadcastabile su a lungo assi singoletto.

    Raises:
        ShapeError: con entrambe le shape nel messaggio
    """
    if len(a_shape) != len(b_shape) or any(
        bd != ad and bd != 1 for ad, bd in zip(a_shape, b_shape)
    ):
        raise ShapeError(f"Shape non broadcastabili: {tuple(a_shape)} vs {tuple(b_shape)}")


def reduce_to_shape(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Somma grad sugli assi su cui è avvenuto il broadcast verso shape."""
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad

# ============================================================================
# ELEMENTWISE
# ============================================================================

def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b, con b broadcastabile su a."""
    check_broadcast(a.shape, b.shape)

    def backward_fn(g):
        return (
            g if a.requires_grad else None,
            reduce_to_shape(g, b.shape) if b.requires_grad else None,
        )

    return make_result(a.data + b.data, (a, b), "add", backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    """a - b, con b broadcastabile su a."""
    check_broadcast(a.shape, b.shape)

    def backward_fn(g):
        return (
            g if a.requires_grad else None,
            -reduce_to_shape(g, b.shape) if b.requires_grad else None,
        )

    return make_result(a.data - b.data, (a, b), "sub", backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Prodotto elemento per elemento (Hadamard), b broadcastabile su a."""
    check_broadcast(a.shape, b.shape)

    def backward_fn(g):
        return (
            g * b.data if a.requires_grad else None,
            reduce_to_shape(g * a.data, b.shape) if b.requires_grad else None,
        )

    return make_result(a.data * b.data, (a, b), "mul", backward_fn)


def broadcast_mul(a: Tensor, b: Tensor) -> Tensor:
    """
    a ⊙ b con b espanso lungo gli assi singoletto.

    Esempi: mappa di canale (N,C,1,1) ⊙ (N,C,H,W),
    mappa spaziale (N,1,H,W) ⊙ (N,C,H,W). L'output ha la shape di a.
    """
    return mul(a, b)


def scale(a: Tensor, factor: float) -> Tensor:
    """a * factor (scalare costante)."""
    factor = float(factor)

    def backward_fn(g):
        return (g * factor,)

    return make_result(a.data * factor, (a,), "scale", backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    """
    σ(a) = 1 / (1 + e^-a), numericamente stabile.

    L'output è saturato nell'intervallo aperto (0,1) del dtype corrente.
    """
    finfo = np.finfo(a.dtype)
    out_data = np.clip(expit(a.data), finfo.tiny, 1.0 - finfo.epsneg).astype(a.dtype, copy=False)

    def backward_fn(g):
        return (g * out_data * (1.0 - out_data),)

    return make_result(out_data, (a,), "sigmoid", backward_fn)


def relu(a: Tensor) -> Tensor:
    """max(a, 0); gradiente nullo per a <= 0."""
    mask = a.data > 0

    def backward_fn(g):
        return (g * mask,)

    return make_result(np.where(mask, a.data, 0).astype(a.dtype, copy=False), (a,), "relu", backward_fn)


_ELEMENTWISE_KINDS = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "broadcast_mul": broadcast_mul,
    "sigmoid": sigmoid,
    "relu": relu,
}


def elementwise(kind: str, a: Tensor, b: Optional[Tensor] = None, factor: Optional[float] = None) -> Tensor:
    """
    Dispatcher delle operazioni elementwise.

    Args:
        kind: add | sub | mul | broadcast_mul | sigmoid | relu | scale
        a: primo operando (determina la shape di output)
        b: secondo operando per i tipi binari
        factor: fattore per scale

    Returns:
        Tensor con la shape di a
    """
    if kind == "scale":
        if factor is None:
            raise ValueError("scale richiede factor")
        return scale(a, factor)

    fn = _ELEMENTWISE_KINDS.get(kind)
    if fn is None:
        raise ValueError(f"Operazione elementwise sconosciuta: {kind!r}")

    if kind in ("sigmoid", "relu"):
        return fn(a)

    if b is None:
        raise ValueError(f"{kind} richiede due operandi")
    return fn(a, b)

# ============================================================================
# MATMUL
# ============================================================================

def matmul(a: Tensor, b: Tensor, transpose_b: bool = False) -> Tensor:
    """
    Prodotto matriciale sulle viste (M, K) x (K, P) → (M, P, 1, 1).

    a è vista come (N, C*H*W); b come (N_b, C_b*H_b*W_b), oppure la sua
    trasposta se transpose_b (usato per x · Wᵀ nei layer Dense).

    Raises:
        ShapeError: se le dimensioni interne non coincidono
    """
    a_mat = a.matrix_view()
    b_mat = b.matrix_view().T if transpose_b else b.matrix_view()

    if a_mat.shape[1] != b_mat.shape[0]:
        raise ShapeError(
            f"matmul: dimensioni interne diverse, {a_mat.shape} x {b_mat.shape} "
            f"(shape {a.shape} e {b.shape})"
        )

    out = a_mat @ b_mat

    def backward_fn(g):
        g_mat = g.reshape(out.shape)
        grad_a = (g_mat @ b_mat.T).reshape(a.shape) if a.requires_grad else None
        grad_b = None
        if b.requires_grad:
            grad_b_mat = a_mat.T @ g_mat
            grad_b = (grad_b_mat.T if transpose_b else grad_b_mat).reshape(b.shape)
        return grad_a, grad_b

    return make_result(out.reshape(out.shape[0], out.shape[1], 1, 1), (a, b), "matmul", backward_fn)

# ============================================================================
# RIDUZIONI
# ============================================================================

def sum_all(a: Tensor) -> Tensor:
    """Somma di tutti gli elementi → scalare (1,1,1,1)."""
    def backward_fn(g):
        return (np.broadcast_to(g, a.shape).astype(a.dtype),)

    return make_result(np.sum(a.data, dtype=a.dtype).reshape(1, 1, 1, 1), (a,), "sum", backward_fn)


def mean_spatial(a: Tensor) -> Tensor:
    """Media su (H, W) → (N, C, 1, 1); il gradiente si distribuisce come 1/(H*W)."""
    n, c, h, w = a.shape
    if h * w < 1:
        raise ShapeError(f"Estensione spaziale vuota: {a.shape}")
    inv_area = 1.0 / (h * w)

    def backward_fn(g):
        return (np.broadcast_to(g * inv_area, a.shape).astype(a.dtype),)

    return make_result(a.data.mean(axis=(2, 3), keepdims=True), (a,), "mean_spatial", backward_fn)


def max_spatial(a: Tensor) -> Tensor:
    """
    Max su (H, W) → (N, C, 1, 1).

    Il gradiente va alla prima posizione di massimo (ordine row-major).
    """
    n, c, h, w = a.shape
    if h * w < 1:
        raise ShapeError(f"Estensione spaziale vuota: {a.shape}")
    flat = a.data.reshape(n, c, h * w)
    argmax = flat.argmax(axis=2)
    out = np.take_along_axis(flat, argmax[..., None], axis=2).reshape(n, c, 1, 1)

    def backward_fn(g):
        grad = np.zeros_like(flat)
        np.put_along_axis(grad, argmax[..., None], g.reshape(n, c, 1), axis=2)
        return (grad.reshape(a.shape),)

    return make_result(out, (a,), "max_spatial", backward_fn)


def mean_channels(a: Tensor) -> Tensor:
    """Media sull'asse dei canali → (N, 1, H, W)."""
    inv_c = 1.0 / a.shape[1]

    def backward_fn(g):
        return (np.broadcast_to(g * inv_c, a.shape).astype(a.dtype),)

    return make_result(a.data.mean(axis=1, keepdims=True), (a,), "mean_channels", backward_fn)


def max_channels(a: Tensor) -> Tensor:
    """Max sull'asse dei canali → (N, 1, H, W); gradiente al primo argmax."""
    argmax = a.data.argmax(axis=1)[:, None]
    out = np.take_along_axis(a.data, argmax, axis=1)

    def backward_fn(g):
        grad = np.zeros_like(a.data)
        np.put_along_axis(grad, argmax, g, axis=1)
        return (grad,)

    return make_result(out, (a,), "max_channels", backward_fn)

# ============================================================================
# STRUTTURA
# ============================================================================

def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenazione lungo l'asse dei canali."""
    base = tensors[0].shape
    for t in tensors[1:]:
        if (t.shape[0], t.shape[2], t.shape[3]) != (base[0], base[2], base[3]):
            raise ShapeError(f"concat_channels: shape incompatibili {base} vs {t.shape}")

    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward_fn(g):
        return tuple(
            g[:, bounds[i]:bounds[i + 1]] if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    data = np.concatenate([t.data for t in tensors], axis=1)
    return make_result(data, tuple(tensors), "concat", backward_fn)


def reshape(a: Tensor, shape: Tuple[int, int, int, int]) -> Tensor:
    """Cambia la shape (4-tuple) mantenendo l'ordine row-major."""
    shape = tuple(int(s) for s in shape)
    if len(shape) != 4 or int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: {a.shape} non compatibile con {shape}")

    def backward_fn(g):
        return (g.reshape(a.shape),)

    return make_result(a.data.reshape(shape), (a,), "reshape", backward_fn)

# ============================================================================
# BACKWARD
# ============================================================================

@dataclass
class GradientMap:
    """Associazione nome parametro → gradiente."""
    entries: Dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.entries[name]

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def items(self):
        return self.entries.items()

    def names(self) -> List[str]:
        return list(self.entries)


def topological_order(root: Tensor) -> List[Tensor]:
    """
    Ordine topologico (input prima degli output) dei tensori che
    richiedono gradiente e da cui root dipende. DFS iterativa.
    """
    order: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]

    while stack:
        tensor, processed = stack.pop()
        if processed:
            order.append(tensor)
            continue
        if id(tensor) in visited:
            continue
        visited.add(id(tensor))
        stack.append((tensor, True))
        if tensor.node is not None:
            for parent in tensor.node.parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

    return order


def backward(loss: Tensor, parameters: Optional[Iterable[Parameter]] = None) -> GradientMap:
    """
    Propaga il gradiente dello scalare loss su tutto il grafo.

    I gradienti delle foglie si ACCUMULANO in .grad (fan-out e chiamate
    successive); azzerarli con zero_grad() tra un minibatch e l'altro.
    I tensori intermedi con retain_grad() ricevono il gradiente di questa
    chiamata.

    Args:
        loss: tensore (1,1,1,1)
        parameters: registro dei parametri; se dato, la mappa li copre tutti
                    (zeri per quelli non raggiunti)

    Returns:
        GradientMap nome → gradiente

    Raises:
        ShapeError: se loss non è scalare
    """
    if loss.shape != (1, 1, 1, 1):
        raise ShapeError(f"backward richiede una loss scalare (1,1,1,1), shape {loss.shape}")

    gradients = GradientMap()

    if loss.requires_grad:
        order = topological_order(loss)
        pending: Dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}

        for tensor in reversed(order):
            g = pending.pop(id(tensor), None)
            if g is None:
                continue

            if tensor.node is None:
                if tensor.grad is None:
                    tensor.grad = np.array(g, dtype=tensor.dtype, copy=True)
                else:
                    tensor.grad += g
                continue

            if tensor._retain_grad:
                tensor.grad = np.array(g, dtype=tensor.dtype, copy=True)

            parent_grads = tensor.node.backward_fn(g)
            for parent, parent_grad in zip(tensor.node.parents, parent_grads):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in pending:
                    pending[key] = pending[key] + parent_grad
                else:
                    pending[key] = parent_grad

        for tensor in order:
            if tensor.node is None and isinstance(tensor, Parameter):
                if tensor.name in gradients.entries and gradients.entries[tensor.name] is not tensor.grad:
                    raise ValueError(f"Nome parametro duplicato nel grafo: {tensor.name!r}")
                gradients.entries[tensor.name] = tensor.grad

    if parameters is not None:
        registry = GradientMap()
        for param in parameters:
            if param.name in registry.entries:
                raise ValueError(f"Nome parametro duplicato nel registro: {param.name!r}")
            if param.grad is None:
                param.grad = np.zeros_like(param.data)
            registry.entries[param.name] = param.grad
        return registry

    return gradients


def zero_grad(parameters: Iterable[Tensor]) -> None:
    """Azzeramento esplicito dei buffer gradiente."""
    for param in parameters:
        if param.grad is None:
            param.grad = np.zeros_like(param.data)
        else:
            param.grad.fill(0)

# ============================================================================
# GRADIENT CHECK
# ============================================================================

def relative_error(
    analytic: np.ndarray,
    numeric: np.ndarray,
    floor: float = CONFIG['GRADCHECK_DENOM_FLOOR']
) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elemento per elemento."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def finite_difference_check(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    epsilon: float = CONFIG['GRADCHECK_EPSILON'],
    denominator_floor: float = CONFIG['GRADCHECK_DENOM_FLOOR']
) -> float:
    """
    Confronta il gradiente analitico di f in x con le differenze centrali.

    Il lato analitico gira nel dtype di x; quello numerico valuta f su
    copie float64 di x, così l'errore di arrotondamento delle differenze
    finite non domina il confronto in float32.

    Args:
        f: funzione Tensor → scalare (1,1,1,1)
        x: punto di valutazione
        epsilon: passo delle differenze centrali (> 0)
        denominator_floor: floor del denominatore dell'errore relativo

    Returns:
        Massimo errore relativo sulle coordinate

    Raises:
        ValueError: se epsilon <= 0
        NonFiniteError: se f o i gradienti producono NaN/Inf
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon deve essere > 0, ricevuto {epsilon}")

    point = Tensor(x.data.copy(), requires_grad=True, dtype=x.dtype)
    loss = f(point)
    backward(loss)
    analytic = point.grad if point.grad is not None else np.zeros_like(point.data)

    if not np.all(np.isfinite(loss.data)) or not np.all(np.isfinite(analytic)):
        raise NonFiniteError("Valori non finiti nel gradiente analitico")

    base = x.data.astype(np.float64)
    numeric = np.zeros_like(base)
    flat_base = base.reshape(-1)
    flat_numeric = numeric.reshape(-1)

    with no_grad(), precision(np.float64):
        for i in range(flat_base.size):
            original = flat_base[i]

            flat_base[i] = original + epsilon
            f_plus = f(Tensor(base, dtype=np.float64)).item()
            flat_base[i] = original - epsilon
            f_minus = f(Tensor(base, dtype=np.float64)).item()
            flat_base[i] = original

            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NonFiniteError(f"Valori non finiti alla coordinata {i}")
            flat_numeric[i] = (f_plus - f_minus) / (2.0 * epsilon)

    error = relative_error(analytic, numeric, floor=denominator_floor)
    max_error = float(error.max()) if error.size else 0.0
    logger.debug(f"finite_difference_check: max rel error {max_error:.3e} su {error.size} coordinate")
    return max_error
