"""Command-line front end: preprocess, split, train, eval, gradcam.

Exit codes: 0 success, 2 usage or config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from fundusnet.checkpoint import CheckpointError, atomic_write, checkpoint_load, checkpoint_save
from fundusnet.data.manifest import (
    LABELS,
    Manifest,
    ManifestError,
    Record,
    balance_downsample,
    load_manifest,
    stratified_split,
)
from fundusnet.data.netpbm import FormatError, read_ppm, write_pgm, write_ppm
from fundusnet.data.transforms import AugmentPolicy, crop_black_border, resize_bilinear, to_tensor
from fundusnet.gradcam import gradcam_for_image, superimpose
from fundusnet.metrics import metrics_from_confusion, report_render
from fundusnet.models import PRESETS, ArchitectureConfig, Model, preset
from fundusnet.neuralnet.ops import ShapeError, softmax
from fundusnet.rng import Rng
from fundusnet.training import DataError, NumericError, TrainConfig, evaluate, train

log = logging.getLogger("fundusnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
RUN_SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.csv"


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _write_text(path, text: str) -> None:
    atomic_write(path, text.encode("utf-8"))


def _read_ppm_file(path: Path):
    try:
        return read_ppm(path.read_bytes())
    except (OSError, FormatError) as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_DATA) from exc


def _load_manifest(path) -> Manifest:
    try:
        return load_manifest(path)
    except OSError as exc:
        raise CliError(f"cannot read manifest {path}: {exc}", EXIT_DATA) from exc
    except ManifestError as exc:
        raise CliError(f"invalid manifest {path}: {exc}", EXIT_DATA) from exc


def cmd_preprocess(args) -> int:
    src, dst = Path(args.in_dir), Path(args.out_dir)
    manifest_path = src / MANIFEST_NAME
    manifest = _load_manifest(manifest_path) if manifest_path.exists() else Manifest(())
    if len(manifest) == 0:
        raise CliError(f"no manifest records in {src}", EXIT_DATA)
    if args.size < 1 or not 0 <= args.threshold <= 255:
        raise CliError("--size must be >= 1 and --threshold in [0, 255]", EXIT_USAGE)
    for record in manifest.records:
        image = _read_ppm_file(src / record.path)
        image = resize_bilinear(crop_black_border(image, args.threshold), args.size, args.size)
        atomic_write(dst / record.path, write_ppm(image))
    _write_text(dst / MANIFEST_NAME, manifest.to_csv())
    print(f"preprocessed {len(manifest)} images to {args.size}x{args.size} in {dst}")
    return EXIT_OK


def _rebase(manifest: Manifest, src_dir: Path, dst_dir: Path) -> Manifest:
    """Rewrite record paths so they stay valid relative to ``dst_dir``."""
    out = []
    for r in manifest.records:
        rel = os.path.relpath(os.path.abspath(src_dir / r.path), os.path.abspath(dst_dir))
        out.append(Record(Path(rel).as_posix(), r.label))
    return Manifest(tuple(out))


def cmd_split(args) -> int:
    if not 0.0 < args.ratio < 1.0:
        raise CliError(f"--ratio must lie in the open interval (0, 1), got {args.ratio}", EXIT_USAGE)
    manifest_path = Path(args.manifest)
    manifest = _load_manifest(manifest_path)
    try:
        balanced = balance_downsample(manifest, Rng(args.seed))
        split = stratified_split(balanced, args.ratio, args.seed)
    except ManifestError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    out = Path(args.out_dir)
    for name, part in (("train.csv", split.train), ("test.csv", split.test)):
        _write_text(out / name, _rebase(part, manifest_path.parent, out).to_csv())
    tc, sc = split.train.counts(), split.test.counts()
    print("train: " + ", ".join(f"{k}={v}" for k, v in tc.items()))
    print("test:  " + ", ".join(f"{k}={v}" for k, v in sc.items()))
    return EXIT_OK


def validate_run_config(obj, base: Path):
    """Check a run config, collecting every problem. Returns ``(problems, resolved)``."""
    problems = []
    if not isinstance(obj, dict):
        return ["config must be a JSON object"], {}
    if obj.get("schema_version") != RUN_SCHEMA_VERSION:
        problems.append(f"schema_version must be {RUN_SCHEMA_VERSION}")
    resolved = {}
    has_model, has_arch = "model" in obj, "architecture" in obj
    if has_model == has_arch:
        problems.append("exactly one of 'model' (preset name) or 'architecture' (file) is required")
    elif has_model and obj["model"] not in PRESETS:
        problems.append(f"unknown model preset {obj['model']!r}; choose from {sorted(PRESETS)}")
    elif has_arch:
        arch = base / str(obj["architecture"])
        if not arch.is_file():
            problems.append(f"architecture file {arch} does not exist")
        resolved["architecture"] = arch
    manifest = obj.get("manifest")
    if not isinstance(manifest, str):
        problems.append("'manifest' (path to a training manifest CSV) is required")
    elif not (base / manifest).is_file():
        problems.append(f"manifest {base / manifest} does not exist")
    else:
        resolved["manifest"] = base / manifest

    def positive_int(key, default):
        v = obj.get(key, default)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            problems.append(f"'{key}' must be a positive integer, got {v!r}")
        return v

    resolved["epochs"] = positive_int("epochs", 30)
    resolved["batch_size"] = positive_int("batch_size", 16)
    seed = obj.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        problems.append(f"'seed' must be a non-negative integer, got {seed!r}")
    resolved["seed"] = seed
    lr = obj.get("lr", 1e-3)
    if not isinstance(lr, (int, float)) or lr <= 0:
        problems.append(f"'lr' must be a positive number, got {lr!r}")
    resolved["lr"] = lr
    ratio = obj.get("train_ratio")
    if ratio is not None and not (isinstance(ratio, (int, float)) and 0 < ratio < 1):
        problems.append(f"'train_ratio' must lie in (0, 1), got {ratio!r}")
    resolved["train_ratio"] = ratio
    aug = obj.get("augment", {})
    if aug is None:
        resolved["augment"] = None
    elif isinstance(aug, dict) and set(aug) <= {"hflip", "vflip", "rotation"}:
        try:
            resolved["augment"] = AugmentPolicy(**{k: float(v) for k, v in aug.items()})
        except (TypeError, ValueError):
            problems.append(f"'augment' values must be numbers, got {aug!r}")
    else:
        problems.append("'augment' must be null or an object with hflip, vflip, rotation")
    return problems, resolved


def cmd_train(args) -> int:
    config_path = Path(args.config)
    try:
        obj = json.loads(config_path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read config {config_path}: {exc}", EXIT_USAGE) from exc
    problems, run = validate_run_config(obj, config_path.parent)
    if problems:
        raise CliError("invalid run config:\n" + "\n".join(f"  - {p}" for p in problems),
                       EXIT_USAGE)
    if "architecture" in run:
        try:
            arch = ArchitectureConfig.from_json(json.loads(run["architecture"].read_text()))
        except (ValueError, KeyError, TypeError) as exc:
            raise CliError(f"invalid architecture file: {exc}", EXIT_USAGE) from exc
    else:
        arch = preset(obj["model"])
    cfg = TrainConfig(epochs=run["epochs"], batch_size=run["batch_size"], seed=run["seed"],
                      lr=run["lr"], augment=run["augment"], train_ratio=run["train_ratio"])
    manifest = _load_manifest(run["manifest"])
    model = Model(arch, seed=cfg.seed)
    try:
        model, history = train(model, manifest, cfg, root=run["manifest"].parent)
    except DataError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    except NumericError as exc:
        raise CliError(f"training diverged: {exc}", EXIT_NUMERIC) from exc
    meta = {"seed": cfg.seed, "train_ratio": cfg.train_ratio, "batch_size": cfg.batch_size,
            "epochs": cfg.epochs, "lr": cfg.lr,
            "train_accuracy": history[-1]["accuracy"]}
    atomic_write(args.out, checkpoint_save(model, meta))
    log_doc = {"model": arch.name, **meta,
               "augment": cfg.augment.to_json() if cfg.augment else None,
               "history": history}
    log_path = args.log or f"{args.out}.log.json"
    _write_text(log_path, json.dumps(log_doc, indent=2, sort_keys=True) + "\n")
    last = history[-1]
    print(f"trained {arch.name}: epoch {last['epoch']} loss {last['loss']:.4f} "
          f"accuracy {last['accuracy']:.3f}; checkpoint {args.out}")
    return EXIT_OK


def _load_checkpoint(path):
    try:
        return checkpoint_load(Path(path).read_bytes())
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {path}: {exc}", EXIT_DATA) from exc
    except (CheckpointError, ShapeError) as exc:
        raise CliError(f"invalid checkpoint {path}: {exc}", EXIT_DATA) from exc


def cmd_eval(args) -> int:
    model, meta = _load_checkpoint(args.ckpt)
    split_path = Path(args.split)
    manifest = _load_manifest(split_path)
    try:
        cm = evaluate(model, manifest, root=split_path.parent)
    except DataError as exc:
        raise CliError(str(exc), EXIT_DATA) from exc
    report = metrics_from_confusion(cm, model=model.config.name,
                                    train_ratio=meta.get("train_ratio"), seed=meta.get("seed"),
                                    train_accuracy=meta.get("train_accuracy"))
    table, _ = report_render([report])
    print(table, end="")
    if args.report:
        _write_text(args.report, json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_gradcam(args) -> int:
    model, _ = _load_checkpoint(args.ckpt)
    image = _read_ppm_file(Path(args.image))
    _, h, w = model.config.input_shape
    if (image.width, image.height) != (w, h):
        raise CliError(f"image is {image.width}x{image.height}, model expects {w}x{h}", EXIT_DATA)
    taps = model.config.feature_map_layers()
    layer = args.layer or model.config.tap
    if layer not in taps:
        raise CliError(f"unknown layer {layer!r}; available taps: {', '.join(taps)}", EXIT_USAGE)
    choices = ["auto"] + [str(i) for i in range(len(LABELS))]
    if args.class_ not in choices:
        raise CliError(f"--class must be one of {', '.join(choices)}, got {args.class_}", EXIT_USAGE)
    class_index = None if args.class_ == "auto" else int(args.class_)
    heat = gradcam_for_image(model, to_tensor(image), class_index, layer)
    probs = softmax(heat.logits[None])[0]
    predicted = int(np.argmax(heat.logits))
    atomic_write(f"{args.out}.heat.pgm", write_pgm(heat.to_gray()))
    atomic_write(f"{args.out}.overlay.ppm", write_ppm(superimpose(image, heat)))
    print(f"predicted class: {predicted} ({LABELS[predicted]}) confidence {probs[predicted]:.4f}")
    print(f"explained class: {heat.target_class} ({LABELS[heat.target_class]}) at layer {layer}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fundusnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="crop black borders and resize a corpus")
    p.add_argument("--in", dest="in_dir", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.add_argument("--size", type=int, default=299)
    p.add_argument("--threshold", type=int, default=15)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("split", help="balance classes and write train/test manifests")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", dest="out_dir", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="training log path (default: <out>.log.json)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a test manifest")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", required=True, help="test manifest CSV")
    p.add_argument("--report", help="write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcam", help="heatmap and overlay for one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--class", dest="class_", default="auto")
    p.add_argument("--layer")
    p.add_argument("--out", required=True, help="output prefix")
    p.set_defaults(func=cmd_gradcam)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
