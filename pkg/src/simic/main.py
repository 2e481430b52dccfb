#!/usr/bin/env python
"""
Command-line entry point.

    simic synth    --out DIR --n 100 --seed 7
    simic split    --manifest DIR/manifest.csv --seed 0
    simic augment  --manifest DIR/manifest.csv
    simic train    --manifest DIR/manifest_augmented.csv --backbone resnet --attention mha --mode half
    simic eval     --checkpoint run.ckpt --manifest DIR/manifest.csv --split eval
    simic attmap   --checkpoint run.ckpt --image DIR/images/tip_0000.pgm --width 0.3 --height 0.35
    simic baseline --manifest DIR/manifest.csv
    simic compare  --checkpoints a.ckpt b.ckpt --manifest DIR/manifest.csv

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
# std-lib imports
import argparse
import logging
import sys
from pathlib import Path
from typing import Dict, Optional, Sequence

# 3 party imports
import numpy as np
import pandas as pd

# project imports
from simic.classical.measure import baseline_report
from simic.config import RunConfig, configure_logging
from simic.core.tensor import Tensor, no_grad
from simic.data.augment import AugmentationSpec, expand_training_set
from simic.data.dataset import load_manifest
from simic.data.image_io import read_image
from simic.data.synthetic import SynthSpec, generate_synthetic
from simic.model.attention_maps import AttentionMaps, export_attention_map
from simic.model.checkpoint import load_checkpoint
from simic.model.config import ATTENTIONS, BACKBONE_ALIASES, MODES, ModelConfig
from simic.model.simic import build, images_to_tensor
from simic.objective.metrics import compare_reports, evaluate
from simic.plotting.plot_helper import render_attention_overlay, training_curve
from simic.training.trainer import TrainConfig, train

logger = logging.getLogger("simic")


# Argument types ##############################################################

def positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{value!r} is not an integer")
    if number < 1:
        raise argparse.ArgumentTypeError(f"{value!r} must be a positive integer")
    return number


def positive_float(value: str) -> float:
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{value!r} is not a number")
    if not number > 0:
        raise argparse.ArgumentTypeError(f"{value!r} must be positive")
    return number


def non_negative_float(value: str) -> float:
    try:
        number = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{value!r} is not a number")
    if number < 0:
        raise argparse.ArgumentTypeError(f"{value!r} must not be negative")
    return number


def threshold_value(value: str):
    if value == "auto":
        return value
    try:
        level = int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threshold must be 'auto' or an integer grey level, got {value!r}")
    if not 0 <= level <= 255:
        raise argparse.ArgumentTypeError(f"threshold {level} is outside 0..255")
    return level


# Subcommands #################################################################

def _ensure_empty(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()) and not force:
        raise FileExistsError(f"output directory {str(out)!r} is not empty; pass --force to overwrite")


def cmd_synth(run: RunConfig) -> int:
    out = Path(run.out)
    _ensure_empty(out, run.force)
    spec = SynthSpec(
        size=run.size,
        scale_nm=run.scale_nm,
        blur_sigma=(0.0, run.blur_max),
        noise_sigma=(0.0, run.noise_max),
        center_jitter_px=run.jitter,
        seed=run.seed,
    )
    _, manifest = generate_synthetic(spec, run.n, out_dir=out)
    print(f"wrote {len(manifest)} samples and {out / 'manifest.csv'}")
    return 0


def cmd_split(run: RunConfig) -> int:
    manifest = load_manifest(run.manifest).assign_splits(run.seed)
    target = Path(run.out) if run.out else Path(run.manifest)
    manifest.save(target)
    counts = manifest.split_counts()
    print(f"{counts['train']} train / {counts['val']} val / {counts['eval']} eval -> {target}")
    return 0


def cmd_augment(run: RunConfig) -> int:
    manifest = load_manifest(run.manifest)
    spec = AugmentationSpec(alphas=list(run.alphas), betas=list(run.betas))
    target = Path(run.out) if run.out else Path(run.manifest).with_name("manifest_augmented.csv")
    expanded = expand_training_set(manifest, spec, out_dir=target.parent)
    expanded.save(target)
    before, after = manifest.split_counts(), expanded.split_counts()
    print(f"train {before['train']} -> {after['train']}, val {after['val']}, eval {after['eval']} -> {target}")
    return 0


def _model_config(run: RunConfig, input_size: int) -> ModelConfig:
    return ModelConfig(
        backbone=BACKBONE_ALIASES[run.backbone],
        attention=run.attention,
        mode=run.mode,
        embed_dim=run.embed_dim,
        heads=run.heads,
        coord_channels=not run.no_coord,
        widths=list(run.widths),
        input_size=input_size,
        compound_phi=run.phi,
        seed=run.seed,
    )


def cmd_train(run: RunConfig) -> int:
    manifest = load_manifest(run.manifest)
    train_rows = manifest.get_split("train")
    if train_rows.empty:
        raise ValueError("manifest has no train rows; run the split step first")
    sample = read_image(train_rows.path_of(train_rows["file"].iloc[0]))
    if sample.shape[0] != sample.shape[1]:
        raise ValueError(f"images must be square, got {sample.shape}")

    config = _model_config(run, sample.shape[0])
    checkpoint = Path(run.checkpoint)
    train_config = TrainConfig(
        lr=run.lr,
        batch_size=run.batch_size,
        max_epochs=run.epochs,
        weight_decay=run.weight_decay,
        patience=run.patience,
        delta=run.delta,
        reduction=run.reduction,
        seed=run.seed,
        checkpoint_path=checkpoint,
        record_wall_time=run.record_time,
        progress=not run.no_progress,
    )
    result = train(build(config), manifest, train_config)
    log_path = Path(run.log) if run.log else checkpoint.with_suffix(".log.csv")
    result.log.to_csv(log_path)
    if run.plot:
        training_curve(result.log, title=config.name).write_html(run.plot)
    print(f"{config.name}: {result.log.epochs} epochs, best epoch {result.log.best_epoch + 1} "
          f"(val loss {result.log.best_val_loss:.6g}) -> {checkpoint}, {log_path}")
    return 0


def cmd_eval(run: RunConfig) -> int:
    model, normalizer = load_checkpoint(run.checkpoint)
    report = evaluate(model, normalizer, load_manifest(run.manifest), run.split)
    print(report.to_table())
    if run.csv:
        report.to_csv(run.csv)
    return 0


def cmd_attmap(run: RunConfig) -> int:
    model, normalizer = load_checkpoint(run.checkpoint)
    config = model.config
    if config.attention == "none":
        raise ValueError(f"checkpoint {run.checkpoint} has no attention module ({config.name})")
    given = (run.width is not None, run.height is not None)
    structure = None
    if config.mode == "half":
        if not all(given):
            raise ValueError("half-prediction checkpoint needs --width and --height (micrometres)")
        structure = Tensor(normalizer.normalize_structure(np.array([[run.width, run.height]])))
    elif any(given):
        raise ValueError("--width/--height only apply to half-prediction checkpoints")

    image = read_image(run.image)
    with no_grad():
        output = model(images_to_tensor(image[None]), structure)
    sample_id = Path(run.image).stem
    maps = AttentionMaps(weights=output.attention[0], heads=output.attention.shape[1], sample_id=sample_id)
    written = export_attention_map(maps, image.shape, run.out, stem=sample_id)
    if run.overlay:
        written.append(render_attention_overlay(image, maps, run.overlay))
    prediction = normalizer.denormalize(output.predictions.data, config.mode)[0]
    print(f"prediction (um): {', '.join(f'{v:.4f}' for v in prediction)}")
    for path in written:
        print(path)
    return 0


def cmd_baseline(run: RunConfig) -> int:
    manifest = load_manifest(run.manifest)
    report = baseline_report(manifest, scale_nm=run.scale_nm, threshold=run.threshold, smooth_sigma=run.smooth)
    target = Path(run.out) if run.out else Path(run.manifest).with_name("baseline.csv")
    report.to_csv(target, index=False, lineterminator="\n", float_format="%.6f")

    scale = run.scale_nm or manifest.scale_nm_per_px
    measured = report.dropna(subset=["width_px"])
    print(f"measured {len(measured)} of {len(report)} images -> {target}")
    if scale and not measured.empty:
        truth = manifest.set_index("id").loc[measured["id"]]
        px = 1000.0 / scale
        errors = pd.DataFrame({
            "target": ["width", "height", "radius"],
            "mean_abs_error_px": [
                float(np.mean(np.abs(measured[f"{t}_px"].to_numpy() - truth[f"{t}_um"].to_numpy() * px)))
                for t in ("width", "height", "radius")
            ],
        })
        print(errors.to_markdown(index=False, floatfmt=".3f"))
    return 0


def cmd_compare(run: RunConfig) -> int:
    manifest = load_manifest(run.manifest)
    reports = []
    for path in run.checkpoints:
        model, normalizer = load_checkpoint(path)
        reports.append(evaluate(model, normalizer, manifest, run.split, name=f"{model.config.name} ({Path(path).stem})"))
    table = compare_reports(reports)
    print(table.to_markdown(index=False, floatfmt=".5g"))
    if run.csv:
        table.to_csv(run.csv, index=False, lineterminator="\n", float_format="%.10g")
    return 0


# Parser ######################################################################

def build_parser() -> (argparse.ArgumentParser, Dict[str, argparse.ArgumentParser]):
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="flat key=value file; flags override its values")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="warnings and errors only")

    parser = argparse.ArgumentParser(
        prog="simic",
        description="Structure-conditioned attention CNNs for field-emitter tip metrology.",
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    defaults = argparse.ArgumentDefaultsHelpFormatter
    subparsers = {}

    def add(name: str, handler, help_text: str) -> argparse.ArgumentParser:
        sub = commands.add_parser(name, parents=[common], help=help_text, description=help_text,
                                  formatter_class=defaults)
        sub.set_defaults(handler=handler)
        subparsers[name] = sub
        return sub

    synth = add("synth", cmd_synth, "generate a synthetic tip dataset")
    synth.add_argument("--out", required=True, help="dataset directory")
    synth.add_argument("--n", type=positive_int, default=100, help="number of images")
    synth.add_argument("--size", type=positive_int, default=64, help="image side length in pixels")
    synth.add_argument("--scale-nm", type=positive_float, default=10.0, help="nanometres per pixel")
    synth.add_argument("--blur-max", type=non_negative_float, default=1.0, help="largest Gaussian blur sigma (px)")
    synth.add_argument("--noise-max", type=non_negative_float, default=8.0, help="largest noise sigma (grey levels)")
    synth.add_argument("--jitter", type=non_negative_float, default=4.0, help="horizontal centre jitter (px)")
    synth.add_argument("--seed", type=int, default=0, help="generator seed")
    synth.add_argument("--force", action="store_true", help="write into a non-empty directory")

    split = add("split", cmd_split, "assign train/val/eval splits (80:20, then 80:20)")
    split.add_argument("--manifest", required=True, help="manifest CSV")
    split.add_argument("--seed", type=int, default=0, help="shuffle seed")
    split.add_argument("--out", default=None, help="output manifest (default: overwrite the input)")

    augment = add("augment", cmd_augment, "add brightness/contrast variants of the train rows")
    augment.add_argument("--manifest", required=True, help="manifest CSV with splits")
    augment.add_argument("--alphas", type=positive_float, nargs="+", default=[0.6, 1.1, 1.6],
                         help="contrast factors")
    augment.add_argument("--betas", type=float, nargs="+", default=[-40.0, 10.0, 60.0],
                         help="brightness offsets")
    augment.add_argument("--out", default=None, help="output manifest (default: manifest_augmented.csv beside the input)")

    train_cmd = add("train", cmd_train, "train a model")
    train_cmd.add_argument("--manifest", required=True, help="manifest CSV with train and val rows")
    train_cmd.add_argument("--backbone", choices=sorted(BACKBONE_ALIASES), default="resnet",
                           help="resnet, effnet and mobile select micro-scale residual, compound-scaled and "
                                "depthwise-separable backbones, not the full published architectures")
    train_cmd.add_argument("--attention", choices=ATTENTIONS, default="none", help="attention module")
    train_cmd.add_argument("--mode", choices=MODES, default="full",
                           help="full: predict width, height, radius; half: width and height are inputs")
    train_cmd.add_argument("--seed", type=int, default=0, help="initialization and shuffle seed")
    train_cmd.add_argument("--lr", type=positive_float, default=1e-4, help="Adam learning rate")
    train_cmd.add_argument("--batch-size", type=positive_int, default=32, help="minibatch size")
    train_cmd.add_argument("--epochs", type=positive_int, default=500, help="maximum epochs")
    train_cmd.add_argument("--weight-decay", type=non_negative_float, default=1e-5, help="coupled L2 weight decay")
    train_cmd.add_argument("--patience", type=positive_int, default=20, help="early-stopping patience (epochs)")
    train_cmd.add_argument("--delta", type=positive_float, default=1.0, help="Huber threshold")
    train_cmd.add_argument("--reduction", choices=("sum", "mean"), default="sum", help="Huber reduction")
    train_cmd.add_argument("--embed-dim", type=positive_int, default=64, help="embedding dimension d")
    train_cmd.add_argument("--heads", type=positive_int, default=4, help="attention heads (mha)")
    train_cmd.add_argument("--widths", type=positive_int, nargs=3, default=[16, 32, 64], help="stage widths")
    train_cmd.add_argument("--phi", type=non_negative_float, default=1.0, help="compound scaling exponent (effnet)")
    train_cmd.add_argument("--no-coord", action="store_true", help="disable coordinate channels")
    train_cmd.add_argument("--checkpoint", default="simic.ckpt", help="checkpoint path")
    train_cmd.add_argument("--log", default=None, help="training log CSV (default: <checkpoint>.log.csv)")
    train_cmd.add_argument("--plot", default=None, metavar="FILE.html", help="write the loss curves as HTML")
    train_cmd.add_argument("--record-time", action="store_true", help="record wall time per epoch in the log")
    train_cmd.add_argument("--no-progress", action="store_true", help="hide the progress bar")

    evaluate_cmd = add("eval", cmd_eval, "report RMSE and R^2 of a checkpoint")
    evaluate_cmd.add_argument("--checkpoint", required=True, help="checkpoint path")
    evaluate_cmd.add_argument("--manifest", required=True, help="manifest CSV")
    evaluate_cmd.add_argument("--split", choices=("train", "val", "eval"), default="eval", help="split to score")
    evaluate_cmd.add_argument("--csv", default=None, help="also write the report as CSV")

    attmap = add("attmap", cmd_attmap, "export attention maps for one image")
    attmap.add_argument("--checkpoint", required=True, help="checkpoint path")
    attmap.add_argument("--image", required=True, help="P5 image")
    attmap.add_argument("--width", type=positive_float, default=None, help="tip width in um (half mode)")
    attmap.add_argument("--height", type=positive_float, default=None, help="tip height in um (half mode)")
    attmap.add_argument("--out", default=".", help="output directory")
    attmap.add_argument("--overlay", default=None, metavar="FILE.png", help="also write a colour overlay")

    baseline = add("baseline", cmd_baseline, "classical threshold/contour/circle-fit measurement")
    baseline.add_argument("--manifest", required=True, help="manifest CSV")
    baseline.add_argument("--out", default=None, help="report CSV (default: baseline.csv beside the manifest)")
    baseline.add_argument("--threshold", type=threshold_value, default="auto", help="'auto' or a grey level")
    baseline.add_argument("--smooth", type=non_negative_float, default=0.0, help="Gaussian pre-smoothing sigma")
    baseline.add_argument("--scale-nm", type=positive_float, default=None,
                          help="nanometres per pixel (default: manifest metadata)")

    compare = add("compare", cmd_compare, "evaluate several checkpoints side by side")
    compare.add_argument("--checkpoints", nargs="+", required=True, help="checkpoint paths")
    compare.add_argument("--manifest", required=True, help="manifest CSV")
    compare.add_argument("--split", choices=("train", "val", "eval"), default="eval", help="split to score")
    compare.add_argument("--csv", default=None, help="also write the table as CSV")

    return parser, subparsers


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser, subparsers = build_parser()
    run = RunConfig.parse(parser, subparsers, argv)
    configure_logging(verbose=run.verbose, quiet=run.quiet)
    if run.from_file:
        logger.debug("from %s: %s", run.config_file, ", ".join(run.from_file))
    try:
        return run.handler(run)
    except Exception as e:
        logger.error("%s failed: %s", run.command, e)
        logger.debug("traceback", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
