# -*- coding: utf-8 -*-
"""
============================================================================
CBAMNET - Leaf Disease Classification Engine
Trainer Module
============================================================================
Ottimizzazione e loop di training:
- Adam (β1 0.9, β2 0.999, ε 1e-8, lr 0.001) con stato per nome parametro
- fit(): shuffle per epoca con seed, minibatch, validazione in inferenza,
  history per epoca, checkpoint secondo policy (best_val_acc | last)
- evaluate_split(): loss, accuracy e righe di probabilità per le metriche
============================================================================
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from config import CONFIG
from data_pipeline import BatchLoader, DatasetIndex, SplitAssignment
from model_assembly import Model, ModelSpec, forward, save_checkpoint
from nn_layers import cross_entropy_loss, one_hot, softmax
from tensor_autodiff import GradientMap, Parameter, Tensor, no_grad
from utils import ensure_parent_dir, format_percentage, progress_bar

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

# ============================================================================
# ERRORI
# ============================================================================

class TrainingError(RuntimeError):
    """Errore durante il training; epoch/batch indicano dove (se noti)."""

    def __init__(self, message: str, epoch: Optional[int] = None, batch: Optional[int] = None):
        where = ""
        if epoch is not None:
            where = f" (epoca {epoch}" + (f", batch {batch})" if batch is not None else ")")
        super().__init__(message + where)
        self.epoch = epoch
        self.batch = batch


class MissingGradientError(KeyError):
    """Gradiente assente per un parametro passato ad adam_step."""

    def __init__(self, name: str):
        super().__init__(name)
        self.name = name

    def __str__(self) -> str:
        return f"Gradiente mancante per il parametro {self.name!r}"

# ============================================================================
# ADAM
# ============================================================================

@dataclass
class AdamState:
    lr: float = CONFIG['LEARNING_RATE']
    beta1: float = CONFIG['ADAM_BETA1']
    beta2: float = CONFIG['ADAM_BETA2']
    eps: float = CONFIG['ADAM_EPS']
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState,
    grads: Union[GradientMap, Mapping[str, np.ndarray]],
    params: Sequence[Parameter]
) -> None:
    """
    Un passo di Adam in-place sui parametri.

    t viene incrementato prima dell'update; i momenti sono corretti per il bias.

    Raises:
        MissingGradientError: un parametro non ha gradiente (nessun parametro viene modificato)
    """
    for param in params:
        if param.name not in grads or grads[param.name] is None:
            raise MissingGradientError(param.name)

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t

    for param in params:
        g = grads[param.name]
        m = state.m.get(param.name)
        if m is None:
            m = state.m[param.name] = np.zeros_like(param.data)
            state.v[param.name] = np.zeros_like(param.data)
        v = state.v[param.name]

        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)

        m_hat = m / correction1
        v_hat = v / correction2
        param.data -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype)

# ============================================================================
# CONFIGURAZIONE / HISTORY
# ============================================================================

@dataclass
class TrainConfig:
    epochs: int = CONFIG['EPOCHS']
    batch_size: int = CONFIG['BATCH_SIZE']
    lr: float = CONFIG['LEARNING_RATE']
    seed: int = CONFIG['SEED']
    dropout_rate: Optional[float] = None     # None: quello della ModelSpec
    reduction_ratio: Optional[int] = None
    checkpoint_policy: str = CONFIG['CHECKPOINT_POLICY']

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError(f"epochs e batch_size devono essere positivi ({self.epochs}, {self.batch_size})")
        if self.lr <= 0:
            raise ValueError(f"Learning rate non positivo: {self.lr}")
        if self.dropout_rate is not None and not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate fuori da [0,1): {self.dropout_rate}")
        if self.reduction_ratio is not None and self.reduction_ratio not in CONFIG['REDUCTION_RATIO_CHOICES']:
            raise ValueError(
                f"reduction_ratio {self.reduction_ratio} non ammesso (scelte: {CONFIG['REDUCTION_RATIO_CHOICES']})"
            )
        if self.checkpoint_policy not in CONFIG['CHECKPOINT_POLICIES']:
            raise ValueError(
                f"checkpoint_policy sconosciuta: {self.checkpoint_policy!r} "
                f"(ammesse: {CONFIG['CHECKPOINT_POLICIES']})"
            )

    def mismatches(self, spec: ModelSpec) -> List[str]:
        """Campi impostati che non coincidono con la ModelSpec del modello."""
        found = []
        if self.dropout_rate is not None and self.dropout_rate != spec.dropout_rate:
            found.append(f"dropout_rate {self.dropout_rate} != {spec.dropout_rate}")
        if self.reduction_ratio is not None and self.reduction_ratio != spec.reduction_ratio:
            found.append(f"reduction_ratio {self.reduction_ratio} != {spec.reduction_ratio}")
        return found


HISTORY_COLUMNS = ['epoch', 'train_loss', 'train_acc', 'val_loss', 'val_acc']


@dataclass
class TrainingHistory:
    records: List[Dict[str, float]] = field(default_factory=list)
    step_losses: List[float] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_acc: float = -1.0

    @property
    def steps(self) -> int:
        return len(self.step_losses)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records, columns=HISTORY_COLUMNS)


def save_history_csv(history: TrainingHistory, path: PathLike) -> None:
    """CSV con colonne epoch,train_loss,train_acc,val_loss,val_acc."""
    ensure_parent_dir(path)
    history.to_frame().to_csv(path, index=False)
    logger.debug(f"History scritta: {path}")


def load_history_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path)

# ============================================================================
# BATCH PLANNING
# ============================================================================

def plan_batches(order: Sequence[int], batch_size: int) -> List[List[int]]:
    """
    Suddivide order in batch consecutivi; l'ultimo batch incompleto resta,
    ma un batch finale di 1 elemento viene unito al precedente (BatchNorm).
    """
    order = [int(i) for i in order]
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) == 1:
        batches[-2].extend(batches.pop())
    return batches

# ============================================================================
# VALUTAZIONE
# ============================================================================

@dataclass
class EvaluationResult:
    loss: float
    accuracy: float
    probabilities: np.ndarray   # (N, K)
    labels: np.ndarray          # (N,)

    @property
    def predictions(self) -> np.ndarray:
        # argmax: a parità vince l'indice di classe più basso
        return self.probabilities.argmax(axis=1)


def predict_proba(model: Model, x: Tensor) -> np.ndarray:
    """Probabilità (N, K) in inferenza, senza grafo."""
    model.set_mode("infer")
    with no_grad():
        probs = softmax(forward(model, x))
    return probs.matrix_view().copy()


def evaluate_split(
    model: Model,
    loader: BatchLoader,
    positions: Sequence[int],
    batch_size: int = CONFIG['BATCH_SIZE']
) -> EvaluationResult:
    """
    Valuta il modello (modo infer) sugli indici dati.

    Raises:
        TrainingError: split vuoto
    """
    if len(positions) == 0:
        raise TrainingError("Split vuoto: niente da valutare")

    model.set_mode("infer")
    num_classes = model.spec.num_classes
    rows, label_chunks = [], []
    total_loss = 0.0

    with no_grad():
        for x, labels in loader.iter_batches(plan_batches(positions, batch_size)):
            probs = softmax(forward(model, x))
            loss = cross_entropy_loss(probs, one_hot(labels, num_classes))
            total_loss += loss.item() * len(labels)
            rows.append(probs.matrix_view().copy())
            label_chunks.append(labels)

    probabilities = np.concatenate(rows).astype(np.float64)
    labels = np.concatenate(label_chunks)
    accuracy = float(np.mean(probabilities.argmax(axis=1) == labels))
    return EvaluationResult(
        loss=total_loss / len(labels),
        accuracy=accuracy,
        probabilities=probabilities,
        labels=labels,
    )

# ============================================================================
# TRAINING LOOP
# ============================================================================

def _snapshot(model: Model) -> Dict[str, np.ndarray]:
    return {name: tensor.data.copy() for name, tensor in model.registry.items()}


def _restore(model: Model, snapshot: Dict[str, np.ndarray]) -> None:
    for name, data in snapshot.items():
        model.registry[name].data[...] = data


def fit(
    model: Model,
    index: DatasetIndex,
    split: SplitAssignment,
    cfg: TrainConfig,
    loader: Optional[BatchLoader] = None,
    checkpoint_path: Optional[PathLike] = None,
    metadata: Optional[Dict[str, Any]] = None
) -> TrainingHistory:
    """
    Training completo.

    Ogni epoca: permutazione del train con default_rng([seed, epoca]),
    batch in modo train, cross-entropy, backward, Adam; poi validazione
    in modo infer. Con policy best_val_acc il modello finale (e il
    checkpoint) corrispondono all'epoca con val_acc migliore.

    Args:
        model: modello costruito con la ModelSpec desiderata
        index: dataset (eventualmente già espanso con augmentation)
        split: assegnazione train/val/test su index
        cfg: iperparametri
        loader: BatchLoader su index (default: nuovo loader alla risoluzione della spec)
        checkpoint_path: dove salvare il checkpoint (opzionale)
        metadata: informazioni aggiuntive per l'header del checkpoint

    Returns:
        TrainingHistory

    Raises:
        TrainingError: split vuoti, loss non finita, cfg incoerente con model.spec
    """
    cfg.validate()
    mismatches = cfg.mismatches(model.spec)
    if mismatches:
        raise TrainingError(f"TrainConfig incoerente con la ModelSpec: {'; '.join(mismatches)}")
    if not split.train:
        raise TrainingError("Split di training vuoto")
    if not split.val:
        raise TrainingError("Split di validazione vuoto (servono almeno 10 campioni per classe)")

    loader = loader if loader is not None else BatchLoader(index, model.spec.input_size)
    state = AdamState(lr=cfg.lr)
    history = TrainingHistory()
    num_classes = model.spec.num_classes
    best_snapshot: Optional[Dict[str, np.ndarray]] = None

    checkpoint_meta = dict(metadata or {})
    checkpoint_meta.update({
        'class_names': list(index.class_names),
        'seed': cfg.seed,
        'checkpoint_policy': cfg.checkpoint_policy,
    })

    logger.info(
        f"🏋️ Training: {cfg.epochs} epoche, batch {cfg.batch_size}, lr {cfg.lr}, "
        f"train {len(split.train)} / val {len(split.val)}"
    )

    for epoch in range(1, cfg.epochs + 1):
        model.set_mode("train")
        order = np.random.default_rng([cfg.seed, epoch]).permutation(np.array(split.train, dtype=np.int64))
        batches = plan_batches(order, cfg.batch_size)

        epoch_loss, epoch_correct, seen = 0.0, 0, 0
        batch_iter = progress_bar(
            loader.iter_batches(batches), desc=f"Epoch {epoch}/{cfg.epochs}", total=len(batches)
        )
        for batch_no, (x, labels) in enumerate(batch_iter, 1):
            model.zero_grad()
            probs = softmax(forward(model, x))
            loss = cross_entropy_loss(probs, one_hot(labels, num_classes))
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise TrainingError(f"Loss non finita ({loss_value})", epoch=epoch, batch=batch_no)

            grads = model.gradient_map(loss)
            adam_step(state, grads, model.parameters())

            history.step_losses.append(loss_value)
            epoch_loss += loss_value * len(labels)
            epoch_correct += int(np.sum(probs.matrix_view().argmax(axis=1) == labels))
            seen += len(labels)

        val = evaluate_split(model, loader, split.val, cfg.batch_size)
        record = {
            'epoch': epoch,
            'train_loss': epoch_loss / seen,
            'train_acc': epoch_correct / seen,
            'val_loss': val.loss,
            'val_acc': val.accuracy,
        }
        history.records.append(record)
        logger.info(
            f"Epoch {epoch}/{cfg.epochs} - loss {record['train_loss']:.4f} - "
            f"acc {format_percentage(record['train_acc'])} - val_loss {val.loss:.4f} - "
            f"val_acc {format_percentage(val.accuracy)}"
        )

        improved = val.accuracy > history.best_val_acc
        if improved:
            history.best_val_acc = val.accuracy
            history.best_epoch = epoch

        if cfg.checkpoint_policy == "last" or improved:
            best_snapshot = _snapshot(model) if cfg.checkpoint_policy == "best_val_acc" else None
            if checkpoint_path is not None:
                checkpoint_meta['epoch'] = epoch
                checkpoint_meta['best_epoch'] = history.best_epoch
                save_checkpoint(model, checkpoint_path, metadata=checkpoint_meta)

    if best_snapshot is not None:
        _restore(model, best_snapshot)
        logger.info(
            f"✅ Modello all'epoca migliore {history.best_epoch} "
            f"(val_acc {format_percentage(history.best_val_acc)})"
        )

    model.metadata.update(checkpoint_meta)
    model.metadata['best_epoch'] = history.best_epoch
    model.set_mode("infer")
    return history
