# -*- coding: utf-8 -*-
"""
============================================================================
CBAMNET - Leaf Disease Classification Engine
Command Line Interface
============================================================================
Sottocomandi:
  train     training da cartella (una sottocartella per classe)
  evaluate  metriche su uno split (JSON, HTML opzionale)
  explain   heatmap e overlay Grad-CAM per una o più immagini
  inspect   tabella parametri per layer e totali
  synth     dataset sintetico deterministico (quadrante piantato)

Exit code: 0 successo, 1 errore di runtime, 2 errore d'uso, 130 interrotto.
Log su stderr, risultati su stdout.

Esempio:
    python cli.py synth --out data/synth --per-class 20
    python cli.py train --data data/synth --out runs/model.cblf --epochs 30 --batch-size 8 --input-size 64
============================================================================
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from config import CONFIG, get_log_level
from data_pipeline import (
    BatchLoader,
    DatasetError,
    DatasetIndex,
    SplitAssignment,
    expand_with_augmentations,
    read_split_audit,
    scan_dataset,
    stratified_split,
    synth_dataset,
    write_split_audit,
)
from gradcam_explain import UnknownLayerError, explain_image, valid_layer_names
from metrics import evaluate_predictions
from model_assembly import (
    BlockSpec,
    CheckpointError,
    ModelSpec,
    ModelSpecError,
    build_model,
    count_parameters,
    load_checkpoint,
)
from report_generator import generate_html_report, generate_metrics_json, save_html_report, save_metrics_json
from trainer import TrainConfig, TrainingError, evaluate_split, fit, load_history_csv, save_history_csv
from utils import ensure_parent_dir, format_large_number, set_progress_enabled, setup_logger

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_INTERRUPTED = 130

AUGMENTATION_MODES = ("none", "train", "before_split")


class UsageError(Exception):
    """Argomenti sintatticamente validi ma incoerenti (exit 2)."""

# ============================================================================
# PARSING ARGOMENTI
# ============================================================================

def _int_list(text: str) -> Tuple[int, ...]:
    try:
        values = tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"lista di interi attesa, ricevuto {text!r}")
    if any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"valori non positivi in {text!r}")
    return values


def _fractions(text: str) -> Tuple[float, float, float]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"frazioni non numeriche: {text!r}")
    if len(values) != 3 or any(v < 0 for v in values) or abs(sum(values) - 1.0) > 1e-6:
        raise argparse.ArgumentTypeError(f"servono 3 frazioni non negative con somma 1: {text!r}")
    return values


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    group = common.add_argument_group("global options")
    group.add_argument("--seed", type=int, default=CONFIG['SEED'], help="random seed")
    group.add_argument("--threads", type=int, default=None,
                       help="data pipeline workers (fallback: CBAMNET_THREADS, then CPU count)")
    group.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                       help="log level (fallback: CBAMNET_LOG_LEVEL, then INFO)")
    group.add_argument("--quiet", action="store_true", help="only warnings and errors, no progress bars")
    group.add_argument("--log-file", default=None, help="also write the log to this file")
    return common


def build_parser() -> argparse.ArgumentParser:
    """Parser con i cinque sottocomandi; ogni default compare in --help."""
    formatter = argparse.ArgumentDefaultsHelpFormatter
    common = _common_parser()
    parser = argparse.ArgumentParser(
        prog="cbamnet",
        description="CBAM-CNN leaf disease classifier (numpy, CPU).",
        formatter_class=formatter,
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    # --- train ---
    train = sub.add_parser("train", parents=[common], formatter_class=formatter,
                           help="train a model on a class-per-folder dataset")
    train.add_argument("--data", required=True, help="dataset root (one folder per class)")
    train.add_argument("--out", required=True, help="checkpoint path; history.csv and split.tsv go beside it")
    train.add_argument("--epochs", type=int, default=CONFIG['EPOCHS'], help="training epochs")
    train.add_argument("--batch-size", type=int, default=CONFIG['BATCH_SIZE'], help="mini-batch size")
    train.add_argument("--lr", type=float, default=CONFIG['LEARNING_RATE'], help="Adam learning rate")
    train.add_argument("--dropout", type=float, default=CONFIG['DROPOUT_RATE'], help="dropout rate in the head")
    train.add_argument("--reduction-ratio", type=int, default=CONFIG['REDUCTION_RATIO'],
                       choices=CONFIG['REDUCTION_RATIO_CHOICES'], help="channel attention reduction ratio")
    train.add_argument("--split", type=_fractions, default=tuple(CONFIG['SPLIT_FRACTIONS']),
                       help="train,val,test fractions")
    train.add_argument("--input-size", type=int, default=CONFIG['INPUT_SIZE'],
                       help="square input resolution (multiple of 16)")
    train.add_argument("--widths", type=_int_list, default=tuple(f for f, _ in CONFIG['BLOCKS']),
                       help="filters of the four blocks")
    train.add_argument("--head-units", type=_int_list, default=tuple(CONFIG['HEAD_UNITS']),
                       help="hidden dense layer widths")
    train.add_argument("--checkpoint-policy", choices=CONFIG['CHECKPOINT_POLICIES'],
                       default=CONFIG['CHECKPOINT_POLICY'], help="which epoch the checkpoint keeps")
    augment = train.add_mutually_exclusive_group()
    augment.add_argument("--augment-train", action="store_true",
                         help="add 4 augmented copies of every training image (after the split)")
    augment.add_argument("--augment-before-split", action="store_true",
                         help="augment the whole dataset 5x, then split")

    # --- evaluate ---
    evaluate = sub.add_parser("evaluate", parents=[common], formatter_class=formatter,
                              help="compute metrics of a checkpoint on a split")
    evaluate.add_argument("--data", required=True, help="dataset root used for training")
    evaluate.add_argument("--model", required=True, help="checkpoint path")
    evaluate.add_argument("--split", choices=["train", "val", "test", "all"], default="test",
                          help="split to evaluate")
    evaluate.add_argument("--split-file", default=None, help="split audit file to reuse instead of recomputing")
    evaluate.add_argument("--out", required=True, help="metrics JSON path")
    evaluate.add_argument("--html", default=None, help="optional HTML report path")
    evaluate.add_argument("--batch-size", type=int, default=CONFIG['BATCH_SIZE'], help="inference batch size")

    # --- explain ---
    explain = sub.add_parser("explain", parents=[common], formatter_class=formatter,
                             help="Grad-CAM heatmap and overlay")
    explain.add_argument("--model", required=True, help="checkpoint path")
    explain.add_argument("--image", required=True, action="append", help="image path (repeatable)")
    explain.add_argument("--class", dest="target_class", type=int, default=None,
                         help="class to explain (default: predicted class)")
    explain.add_argument("--layer", default=CONFIG['GRADCAM_LAYER'], help="block name or layer name")
    explain.add_argument("--alpha", type=float, default=CONFIG['GRADCAM_ALPHA'], help="heatmap blend weight")
    explain.add_argument("--out-dir", required=True, help="output directory for the PNGs")

    # --- inspect ---
    inspect = sub.add_parser("inspect", parents=[common], formatter_class=formatter,
                             help="per-layer parameter table and totals")
    source = inspect.add_mutually_exclusive_group(required=True)
    source.add_argument("--model", default=None, help="checkpoint path")
    source.add_argument("--default-spec", action="store_true", help="inspect the default architecture")
    inspect.add_argument("--csv", default=None, help="also write the table as CSV")

    # --- synth ---
    synth = sub.add_parser("synth", parents=[common], formatter_class=formatter,
                           help="write a deterministic synthetic dataset")
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument("--classes", type=int, default=CONFIG['NUM_CLASSES'], help="number of classes")
    synth.add_argument("--per-class", type=int, default=20, help="images per class")
    synth.add_argument("--noise", type=float, default=CONFIG['SYNTH_NOISE'], help="gaussian noise sigma")
    synth.add_argument("--size", type=int, default=CONFIG['INPUT_SIZE'], help="image side in pixels")

    return parser

# ============================================================================
# DATASET / SPLIT
# ============================================================================

def prepare_dataset(
    index: DatasetIndex,
    augmentation: str,
    seed: int,
    fractions: Sequence[float]
) -> Tuple[DatasetIndex, SplitAssignment]:
    """
    Indice (eventualmente con campioni virtuali) e split, in modo deterministico.

    Usato sia da train sia da evaluate: a parità di seed e modalità lo split coincide.
    """
    if augmentation not in AUGMENTATION_MODES:
        raise ValueError(f"Modalità di augmentation sconosciuta: {augmentation!r}")
    if augmentation == "before_split":
        index, _ = expand_with_augmentations(index, range(len(index)), seed)
        return index, stratified_split(index, seed, fractions)

    split = stratified_split(index, seed, fractions)
    if augmentation == "train":
        index, train = expand_with_augmentations(index, split.train, seed)
        split = SplitAssignment(sorted(train), split.val, split.test, seed=seed, fractions=split.fractions)
    return index, split

# ============================================================================
# SOTTOCOMANDI
# ============================================================================

def cmd_train(args: argparse.Namespace) -> int:
    augmentation = "before_split" if args.augment_before_split else "train" if args.augment_train else "none"
    if len(args.widths) != 4:
        raise UsageError(f"--widths richiede 4 valori, ricevuti {len(args.widths)}")

    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        seed=args.seed,
        dropout_rate=args.dropout,
        reduction_ratio=args.reduction_ratio,
        checkpoint_policy=args.checkpoint_policy,
    )
    try:
        cfg.validate()
    except ValueError as e:
        raise UsageError(str(e)) from e

    logger.info(
        f"epochs={cfg.epochs} batch={cfg.batch_size} lr={cfg.lr} dropout={cfg.dropout_rate} "
        f"reduction_ratio={cfg.reduction_ratio} seed={cfg.seed} split={','.join(map(str, args.split))} "
        f"augmentation={augmentation}"
    )

    index = scan_dataset(args.data)
    kernels = [kernel for _, kernel in CONFIG['BLOCKS']]
    spec = ModelSpec(
        input_size=args.input_size,
        blocks=tuple(BlockSpec(f, k) for f, k in zip(args.widths, kernels)),
        head_units=tuple(args.head_units),
        num_classes=index.num_classes,
        reduction_ratio=args.reduction_ratio,
        dropout_rate=args.dropout,
        dropout_after=tuple(True for _ in args.head_units),
    )
    try:
        model = build_model(spec, seed=args.seed)
    except ModelSpecError as e:
        raise UsageError(str(e)) from e

    index, split = prepare_dataset(index, augmentation, args.seed, args.split)

    out = Path(args.out)
    ensure_parent_dir(out)
    write_split_audit(index, split, out.parent / CONFIG['SPLIT_AUDIT_FILENAME'])

    metadata = {
        'split_fractions': list(args.split),
        'augmentation': augmentation,
        'epochs': cfg.epochs,
        'batch_size': cfg.batch_size,
        'lr': cfg.lr,
    }
    history = fit(
        model, index, split, cfg,
        loader=BatchLoader(index, spec.input_size, args.threads),
        checkpoint_path=out,
        metadata=metadata,
    )
    save_history_csv(history, out.parent / CONFIG['HISTORY_FILENAME'])

    final = history.records[-1]
    print(f"checkpoint: {out}")
    print(f"final_train_accuracy: {final['train_acc']:.4f}")
    print(f"best_epoch: {history.best_epoch} val_accuracy: {history.best_val_acc:.4f}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.model)
    meta = model.metadata

    index = scan_dataset(args.data)
    stored_names = meta.get('class_names')
    if stored_names and list(stored_names) != index.class_names:
        raise DatasetError(f"Classi del dataset {index.class_names} diverse da quelle del checkpoint {stored_names}")

    seed = int(meta.get('seed', args.seed))
    fractions = tuple(meta.get('split_fractions', CONFIG['SPLIT_FRACTIONS']))
    index, split = prepare_dataset(index, meta.get('augmentation', 'none'), seed, fractions)
    if args.split_file:
        split = read_split_audit(args.split_file, index, seed=seed)

    positions = split.get(args.split)
    loader = BatchLoader(index, model.spec.input_size, args.threads)
    result = evaluate_split(model, loader, positions, args.batch_size)
    evaluation = evaluate_predictions(result.probabilities, result.labels, index.class_names)
    report = evaluation['report']

    save_metrics_json(generate_metrics_json(report), args.out)

    if args.html:
        history_path = Path(args.model).parent / CONFIG['HISTORY_FILENAME']
        history = load_history_csv(history_path) if history_path.exists() else None
        html = generate_html_report(
            evaluation,
            title=f"{Path(args.model).name} on {args.split} split ({len(positions)} images)",
            history=history,
            distribution=index.distribution_table(),
            parameter_summary=count_parameters(model).summary(),
        )
        save_html_report(html, args.html)

    macro = report['macro']
    print(f"split: {args.split} ({len(positions)} images)")
    print(f"accuracy: {report['accuracy']:.4f}")
    print(f"macro_precision: {macro['precision']:.4f}")
    print(f"macro_recall: {macro['recall']:.4f}")
    print(f"macro_f1: {macro['f1']:.4f}")
    return EXIT_OK


def cmd_explain(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.model)

    num_classes = model.spec.num_classes
    if args.target_class is not None and not 0 <= args.target_class < num_classes:
        raise UsageError(f"--class {args.target_class} fuori da [0, {num_classes})")
    if model.resolve_capture(args.layer) is None:
        raise UnknownLayerError(args.layer, valid_layer_names(model))
    if not 0.0 <= args.alpha <= 1.0:
        raise UsageError(f"--alpha {args.alpha} fuori da [0, 1]")

    class_names = model.metadata.get('class_names') or [str(c) for c in range(num_classes)]
    for image_path in args.image:
        result = explain_image(
            model, image_path, args.out_dir,
            target_class=args.target_class, layer=args.layer, alpha=args.alpha,
        )
        predicted = result['predicted_class']
        probability = result['probabilities'][predicted]
        print(
            f"{image_path}: predicted {predicted} ({class_names[predicted]}) p={probability:.4f}; "
            f"explained {result['target_class']} -> {result['overlay_path']}"
        )
    return EXIT_OK


def cmd_inspect(args: argparse.Namespace) -> int:
    if args.default_spec:
        model = build_model(ModelSpec(), seed=args.seed)
        source = "default spec"
    else:
        model = load_checkpoint(args.model)
        source = args.model

    counts = count_parameters(model)
    totals = counts.totals()
    print(f"model: {source}")
    print(counts.table.to_string(index=False))
    print(f"trainable: {totals['trainable']}")
    print(f"buffers: {totals['buffers']}")
    print(f"total: {totals['total']}")
    print(f"size: {totals['bytes']} bytes ({counts.mib:.3f} MiB)")
    if args.default_spec:
        deviation = (counts.total - CONFIG['REFERENCE_PARAM_COUNT']) / CONFIG['REFERENCE_PARAM_COUNT']
        logger.info(
            f"📐 Riferimento {format_large_number(CONFIG['REFERENCE_PARAM_COUNT'])} parametri "
            f"({CONFIG['REFERENCE_SIZE_MIB']} MiB): scarto {deviation:+.2%}"
        )

    if args.csv:
        ensure_parent_dir(args.csv)
        counts.table.to_csv(args.csv, index=False)
        logger.info(f"💾 Tabella parametri salvata: {args.csv}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    if args.classes < 2:
        raise UsageError(f"--classes deve essere >= 2, ricevuto {args.classes}")
    if args.per_class < CONFIG['MIN_SAMPLES_PER_CLASS']:
        raise UsageError(
            f"--per-class {args.per_class} sotto il minimo per lo split ({CONFIG['MIN_SAMPLES_PER_CLASS']})"
        )
    if args.noise < 0:
        raise UsageError(f"--noise deve essere >= 0, ricevuto {args.noise}")
    if args.size < 16 or args.size % 16 != 0:
        raise UsageError(f"--size deve essere multiplo positivo di 16, ricevuto {args.size}")

    index = synth_dataset(args.out, args.classes, args.per_class, args.seed, args.noise, args.size)
    print(f"{len(index)} images in {args.out}")
    print(index.distribution_table(augmentation_factor=1).to_string(index=False))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
    "inspect": cmd_inspect,
    "synth": cmd_synth,
}

# ============================================================================
# MAIN ENTRY POINT
# ============================================================================

def main(argv: Optional[List[str]] = None) -> int:
    """Entry point: ritorna l'exit code invece di terminare il processo."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK

    level = logging.WARNING if args.quiet else get_log_level(args.log_level)
    setup_logger(level=level, log_file=args.log_file)
    set_progress_enabled(not args.quiet)

    try:
        return COMMANDS[args.command](args)
    except (UsageError, UnknownLayerError) as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_USAGE
    except KeyboardInterrupt:
        logger.warning("⚠️ Esecuzione interrotta dall'utente")
        return EXIT_INTERRUPTED
    except (CheckpointError, DatasetError, TrainingError, ModelSpecError, OSError, ValueError) as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception(f"❌ Errore inatteso: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
