"""Command-line interface tying the pipeline together.

Verbs: preprocess, split, augment, train, evaluate, predict. Each verb
accepts ``--config`` (a TOML file with [imaging]/[augment]/[train] sections)
and ``--seed``; explicit flags override config-file values, and the
``CT_CLASSIFY_SEED`` environment variable supplies a default seed when
``--seed`` is absent. Exit codes: 0 success, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path, PurePosixPath

from .augment import (AugmentationSpec, DEFAULT_EXPANSION_TARGETS, SplitRatios,
                      expand_dataset, split_dataset)
from .config import load_config, merged_value
from .dataset import (DEFAULT_CLASS_NAMES, DatasetManifest, build_manifest,
                      load_manifest, save_manifest)
from .imaging import ClaheParams, load_grayscale, preprocess_image, resize_bilinear, save_png
from .nn import INPUT_SHAPE, build_model
from .train import TrainConfig, evaluate, load_checkpoint, train
from .metrics import render_report, report_to_csv

PROG = "ct-classify"


@dataclass(frozen=True)
class Command:
    verb: str
    options: dict  # parsed flag values; None where the flag was not given
    config: dict   # config-file sections, {} when no --config


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=PROG, description="Lung-CT classification pipeline")
    sub = parser.add_subparsers(dest="verb", required=True, metavar="verb")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="random seed (default: $CT_CLASSIFY_SEED, else 0)")
    common.add_argument("--config", default=None,
                        help="TOML config file with [imaging]/[augment]/[train] sections")

    p = sub.add_parser("preprocess", parents=[common],
                       help="resize, contrast-enhance, and denoise a raw image tree")
    p.add_argument("--input", required=True, help="raw dataset root (class subdirectories)")
    p.add_argument("--output", required=True, help="destination for PNGs + manifest.csv")
    p.add_argument("--size", type=int, default=None, help="output side length (default 224)")
    p.add_argument("--tiles", type=int, nargs=2, metavar=("M", "N"), default=None,
                   help="contrast-equalization tile grid (default 8 8)")
    p.add_argument("--clip", type=float, default=None,
                   help="histogram clip limit as a fraction of tile pixels (default 0.01)")
    p.add_argument("--bins", type=int, default=None, help="histogram bins (default 256)")

    p = sub.add_parser("split", parents=[common],
                       help="stratified train/val/test tagging of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", default=None, help="output manifest (default: in place)")
    p.add_argument("--train", type=float, default=0.70, dest="train_frac")
    p.add_argument("--val", type=float, default=0.15, dest="val_frac")
    p.add_argument("--test", type=float, default=0.15, dest="test_frac")

    p = sub.add_parser("augment", parents=[common],
                       help="expand classes to target counts with augmented copies")
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", default=None, help="image root (default: manifest directory)")
    p.add_argument("--output", default=None, help="output manifest (default: in place)")
    p.add_argument("--target", action="append", default=None, metavar="CLASS=N",
                   help="per-class target count; repeatable (default: built-in targets)")
    p.add_argument("--splits", choices=("train", "all"), default="train",
                   help="augment only train-tagged records (default) or every record")

    p = sub.add_parser("train", parents=[common],
                       help="fit the classifier on train/val splits of a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", default=None, help="image root (default: manifest directory)")
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint output path (default: <root>/model.ckpt)")
    p.add_argument("--curves", default=None,
                   help="per-epoch CSV output path (default: <root>/curves.csv)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default=None)
    p.add_argument("--learning-rate", "--lr", type=float, default=None,
                   dest="learning_rate")
    p.add_argument("--class-weighting", action="store_true", default=None,
                   help="weight the loss inversely to class frequency")
    p.add_argument("--lenient", action="store_true",
                   help="skip unreadable images with a warning instead of aborting")

    p = sub.add_parser("evaluate", parents=[common],
                       help="score a checkpoint on one split and print the report")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--root", default=None, help="image root (default: manifest directory)")
    p.add_argument("--split", choices=("train", "val", "test", "all"), default="test")
    p.add_argument("--csv", default=None, help="also write the report as CSV here")

    p = sub.add_parser("predict", parents=[common],
                       help="classify one preprocessed image "
                            "(probabilities are raw softmax outputs, uncalibrated)")
    p.add_argument("image", help="path to a grayscale image")
    p.add_argument("--checkpoint", required=True)

    return parser


def parse_cli(argv: list[str]) -> Command:
    """Parse arguments into a Command; usage problems exit with code 2."""
    ns = _build_parser().parse_args(argv)
    options = vars(ns)
    verb = options.pop("verb")
    config_path = options.pop("config", None)
    config = load_config(config_path) if config_path else {}
    return Command(verb=verb, options=options, config=config)


def _resolve_seed(cmd: Command) -> int:
    if cmd.options.get("seed") is not None:
        return cmd.options["seed"]
    env = os.environ.get("CT_CLASSIFY_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ValueError(f"CT_CLASSIFY_SEED must be an integer, got {env!r}")
    return merged_value(None, cmd.config, "train", "seed", 0)


def _clahe_params(cmd: Command) -> tuple[ClaheParams, int]:
    opts, cfg = cmd.options, cmd.config
    tiles = opts.get("tiles")
    tiles_m = tiles[0] if tiles else merged_value(None, cfg, "imaging", "tiles_m", 8)
    tiles_n = tiles[1] if tiles else merged_value(None, cfg, "imaging", "tiles_n", 8)
    params = ClaheParams(
        tiles_m=tiles_m, tiles_n=tiles_n,
        clip=merged_value(opts.get("clip"), cfg, "imaging", "clip", 0.01),
        bins=merged_value(opts.get("bins"), cfg, "imaging", "bins", 256),
    )
    size = merged_value(opts.get("size"), cfg, "imaging", "size", INPUT_SHAPE[0])
    return params, size


def _augment_spec(cmd: Command) -> AugmentationSpec:
    section = dict(cmd.config.get("augment", {}))
    section.pop("targets", None)
    kwargs = {}
    for f in dataclasses.fields(AugmentationSpec):
        if f.name in section:
            value = section.pop(f.name)
            kwargs[f.name] = tuple(value) if isinstance(value, list) else value
    if section:
        raise ValueError(f"unknown [augment] config keys: {', '.join(sorted(section))}")
    return AugmentationSpec(**kwargs)


def _parse_targets(cmd: Command) -> dict[str, int]:
    flags = cmd.options.get("target")
    if flags:
        targets = {}
        for item in flags:
            name, sep, count = item.partition("=")
            if not sep or not count.isdigit():
                raise ValueError(f"--target expects CLASS=N, got {item!r}")
            targets[name] = int(count)
        return targets
    config_targets = cmd.config.get("augment", {}).get("targets")
    if config_targets:
        return {str(k): int(v) for k, v in config_targets.items()}
    return dict(DEFAULT_EXPANSION_TARGETS)


def _train_config(cmd: Command, seed: int) -> TrainConfig:
    opts, cfg = cmd.options, cmd.config
    strict_flag = None if not opts.get("lenient") else False
    return TrainConfig(
        epochs=merged_value(opts.get("epochs"), cfg, "train", "epochs", 10),
        batch_size=merged_value(opts.get("batch_size"), cfg, "train", "batch_size", 32),
        optimizer=merged_value(opts.get("optimizer"), cfg, "train", "optimizer", "adam"),
        learning_rate=merged_value(opts.get("learning_rate"), cfg, "train",
                                   "learning_rate", 1e-3),
        beta1=merged_value(None, cfg, "train", "beta1", 0.9),
        beta2=merged_value(None, cfg, "train", "beta2", 0.999),
        epsilon=merged_value(None, cfg, "train", "epsilon", 1e-7),
        seed=seed,
        rescale=merged_value(None, cfg, "train", "rescale", 1.0 / 255.0),
        strict=merged_value(strict_flag, cfg, "train", "strict", True),
        class_weighting=merged_value(opts.get("class_weighting"), cfg, "train",
                                     "class_weighting", False),
    )


def _manifest_root(cmd: Command) -> Path:
    root = cmd.options.get("root")
    return Path(root) if root else Path(cmd.options["manifest"]).parent


def _run_preprocess(cmd: Command) -> int:
    params, size = _clahe_params(cmd)
    in_root = Path(cmd.options["input"])
    out_root = Path(cmd.options["output"])
    manifest = build_manifest(in_root)
    if len(manifest) == 0:
        raise ValueError(f"no images found under {in_root}")
    out_records = []
    for record in manifest.records:
        image = load_grayscale(in_root / record.path)
        cleaned = preprocess_image(image, params, out_h=size, out_w=size)
        out_rel = str(PurePosixPath(record.path).with_suffix(".png"))
        save_png(cleaned, out_root / out_rel)
        out_records.append(dataclasses.replace(record, path=out_rel))
    out_manifest = DatasetManifest(records=tuple(out_records),
                                   class_names=manifest.class_names)
    save_manifest(out_manifest, out_root / "manifest.csv")
    print(f"preprocessed {len(out_manifest)} images -> {out_root}")
    return 0


def _run_split(cmd: Command) -> int:
    seed = _resolve_seed(cmd)
    manifest_path = Path(cmd.options["manifest"])
    manifest = load_manifest(manifest_path)
    ratios = SplitRatios(cmd.options["train_frac"], cmd.options["val_frac"],
                         cmd.options["test_frac"])
    tr, va, te = split_dataset(manifest, ratios, seed)
    records = tuple(sorted(tr.records + va.records + te.records, key=lambda r: r.path))
    combined = DatasetManifest(records=records, class_names=manifest.class_names)
    out = Path(cmd.options["output"]) if cmd.options.get("output") else manifest_path
    save_manifest(combined, out)
    print(f"split {len(tr)}/{len(va)}/{len(te)} (train/val/test) -> {out}")
    return 0


def _run_augment(cmd: Command) -> int:
    seed = _resolve_seed(cmd)
    manifest_path = Path(cmd.options["manifest"])
    manifest = load_manifest(manifest_path)
    root = _manifest_root(cmd)
    targets = _parse_targets(cmd)
    spec = _augment_spec(cmd)
    if cmd.options["splits"] == "train":
        subject = manifest.filter_split("train")
        if len(subject) == 0:
            raise ValueError("no records tagged 'train'; run the split verb first "
                             "or pass --splits all")
        untouched = tuple(r for r in manifest.records if r.split != "train")
    else:
        subject = manifest
        untouched = ()
    expanded = expand_dataset(subject, targets, seed, root, spec=spec)
    records = tuple(sorted(expanded.records + untouched, key=lambda r: r.path))
    combined = DatasetManifest(records=records, class_names=manifest.class_names)
    out = Path(cmd.options["output"]) if cmd.options.get("output") else manifest_path
    save_manifest(combined, out)
    print(f"augmented {len(subject)} -> {len(expanded)} records; manifest -> {out}")
    return 0


def _run_train(cmd: Command) -> int:
    seed = _resolve_seed(cmd)
    config = _train_config(cmd, seed)
    manifest = load_manifest(Path(cmd.options["manifest"]))
    root = _manifest_root(cmd)
    train_manifest = manifest.filter_split("train")
    val_manifest = manifest.filter_split("val")
    if len(train_manifest) == 0 or len(val_manifest) == 0:
        raise ValueError("manifest needs train- and val-tagged records; "
                         "run the split verb first")
    checkpoint = Path(cmd.options["checkpoint"]) if cmd.options.get("checkpoint") \
        else root / "model.ckpt"
    curves = Path(cmd.options["curves"]) if cmd.options.get("curves") \
        else root / "curves.csv"
    model = build_model(seed=config.seed)
    _, history = train(model, train_manifest, val_manifest, config, root,
                       curves_path=curves, checkpoint_path=checkpoint)
    for i in range(len(history)):
        print(f"epoch {i + 1}/{config.epochs}  "
              f"train_loss={history.train_loss[i]:.4f} "
              f"train_acc={history.train_acc[i]:.4f}  "
              f"val_loss={history.val_loss[i]:.4f} "
              f"val_acc={history.val_acc[i]:.4f}")
    print(f"checkpoint -> {checkpoint}")
    print(f"curves -> {curves}")
    return 0


def _run_evaluate(cmd: Command) -> int:
    model = load_checkpoint(Path(cmd.options["checkpoint"]))
    manifest = load_manifest(Path(cmd.options["manifest"]))
    if cmd.options["split"] != "all":
        manifest = manifest.filter_split(cmd.options["split"])
        if len(manifest) == 0:
            raise ValueError(f"manifest has no {cmd.options['split']!r} records")
    root = _manifest_root(cmd)
    _, report, loss = evaluate(model, manifest, root)
    print(render_report(report, loss))
    if cmd.options.get("csv"):
        Path(cmd.options["csv"]).write_text(report_to_csv(report), encoding="utf-8")
        print(f"report csv -> {cmd.options['csv']}")
    return 0


def _run_predict(cmd: Command) -> int:
    model = load_checkpoint(Path(cmd.options["checkpoint"]))
    image = load_grayscale(Path(cmd.options["image"]))
    side = INPUT_SHAPE[0]
    if (image.height, image.width) != (side, side):
        image = resize_bilinear(image, side, side)
    x = (image.pixels.astype("float32") / 255.0)[None, :, :, None]
    probs = model.forward(x)[0]
    names = DEFAULT_CLASS_NAMES
    print(f"prediction: {names[int(probs.argmax())]}")
    print("probabilities: "
          + " ".join(f"{n}={p:.6f}" for n, p in zip(names, probs)))
    return 0


_RUNNERS = {
    "preprocess": _run_preprocess,
    "split": _run_split,
    "augment": _run_augment,
    "train": _run_train,
    "evaluate": _run_evaluate,
    "predict": _run_predict,
}


def execute(cmd: Command) -> int:
    """Run a parsed Command; returns the process exit status."""
    try:
        return _RUNNERS[cmd.verb](cmd)
    except (OSError, ValueError, ArithmeticError) as exc:
        message = " ".join(str(exc).split()) or exc.__class__.__name__
        print(f"{PROG}: error: {message}", file=sys.stderr)
        return 1


def entrypoint(argv: list[str] | None = None) -> int:
    try:
        cmd = parse_cli(sys.argv[1:] if argv is None else argv)
    except (OSError, ValueError) as exc:  # e.g. unreadable --config file
        message = " ".join(str(exc).split()) or exc.__class__.__name__
        print(f"{PROG}: error: {message}", file=sys.stderr)
        return 1
    return execute(cmd)


if __name__ == "__main__":
    sys.exit(entrypoint())
