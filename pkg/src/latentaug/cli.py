"""Command-line entry point: ``latentaug <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import classifier as clf
from .data import DatasetManifest, ToySpec, generate_toy_dataset
from .errors import LatentAugError
from .pipeline import (
    EXPERIMENT_CONFIGS,
    StageError,
    evaluate_stage,
    generate_stage,
    pca_stage,
    resolve_config,
    run_experiment,
    save_resolved,
    split_stage,
    train_classifier_stage,
    train_vaes,
)
from .report import emit_report

logger = logging.getLogger("latentaug")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in text.split(","))


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in text.split(","))


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="master seed (default 42)")
    p.add_argument("--profile", choices=["desk", "paper"], default=None)
    p.add_argument("--data-root", dest="data_root", default=None, help="dataset root holding manifest.csv")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--config", default=None, help="flat JSON file of RunConfig fields")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentaug", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-toy", help="write the imbalanced toy grating dataset")
    _common(p)
    p.add_argument("--counts", type=_ints, default=None, help="per-class counts, e.g. 65,91,165")
    p.add_argument("--size", type=int, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--overlap", type=float, default=None)
    p.add_argument("--phase-jitter", dest="phase_jitter", type=float, default=None)
    p.add_argument("--orientation-jitter", dest="orientation_jitter", type=float, default=None)
    p.add_argument("--force", action="store_true", help="overwrite a non-empty target")

    p = sub.add_parser("split", help="assign stratified train/val/test splits")
    _common(p)
    p.add_argument("--test-fraction", dest="test_fraction", type=float, default=None)
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=None)

    p = sub.add_parser("train-vae", help="train one VAE per class")
    _common(p)
    p.add_argument("--epochs", dest="vae_epochs", type=int, default=None)
    p.add_argument("--latent-dim", dest="vae_latent_dim", type=int, default=None)

    p = sub.add_parser("generate", help="decode latent interpolations into synthetic images")
    _common(p)
    p.add_argument("--count", dest="synth_count", type=int, default=None)

    p = sub.add_parser("train-clf", help="train classifier configuration(s)")
    _common(p)
    p.add_argument("--name", choices=EXPERIMENT_CONFIGS, action="append", default=None,
                   help="configuration to train (repeatable; default all four)")
    p.add_argument("--epochs", dest="clf_epochs", type=int, default=None)
    p.add_argument("--arch", dest="clf_arch", choices=clf.ARCHITECTURES, default=None)

    p = sub.add_parser("evaluate", help="evaluate trained classifiers on the test split")
    _common(p)

    p = sub.add_parser("run-experiment", help="full pipeline over the four data configurations")
    _common(p)
    p.add_argument("--vae-epochs", dest="vae_epochs", type=int, default=None)
    p.add_argument("--clf-epochs", dest="clf_epochs", type=int, default=None)
    p.add_argument("--count", dest="synth_count", type=int, default=None)
    p.add_argument("--arch", dest="clf_arch", choices=clf.ARCHITECTURES, default=None)

    p = sub.add_parser("pca-export", help="per-class PCA scatter CSVs of real + synthetic images")
    _common(p)
    p.add_argument("--features", dest="pca_features", choices=["pixels", "latent"], default=None)
    return parser


_NON_CONFIG = {"command", "verbose", "config", "counts", "size", "noise", "overlap", "phase_jitter", "orientation_jitter", "force", "name"}


def _config(args):
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    return resolve_config(config_file=args.config, overrides=overrides)


def _manifest(cfg) -> DatasetManifest:
    return DatasetManifest.load(cfg.data_root)


def cmd_gen_toy(args) -> int:
    root = Path(args.data_root or "data")
    if root.exists() and any(root.iterdir()) and not args.force:
        print(f"error: {root} is not empty (use --force to overwrite)", file=sys.stderr)
        return 1
    if root.exists() and args.force:
        import shutil
        shutil.rmtree(root)
    spec_args = {"seed": args.seed if args.seed is not None else 42}
    for key in ("counts", "size", "noise", "overlap", "phase_jitter", "orientation_jitter"):
        if getattr(args, key) is not None:
            spec_args[key] = getattr(args, key)
    manifest = generate_toy_dataset(ToySpec(**spec_args), root)
    for label in range(manifest.num_classes):
        print(f"class {label}: {len(manifest.select(label=label))} images")
    return 0


def cmd_split(args) -> int:
    cfg = _config(args)
    manifest = split_stage(_manifest(cfg), cfg)
    manifest.save()
    for split in ("train", "val", "test"):
        counts = [len(manifest.select(split=split, label=k)) for k in range(manifest.num_classes)]
        print(f"{split}: {counts}")
    return 0


def cmd_train_vae(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out)
    save_resolved(cfg, out)
    paths = train_vaes(_manifest(cfg), cfg, out / "vae")
    for label, path in paths.items():
        print(f"class {label}: {path}")
    return 0


def cmd_generate(args) -> int:
    cfg = _config(args)
    manifest = generate_stage(_manifest(cfg), cfg, Path(cfg.out) / "vae", cfg.synth_count)
    manifest.save()
    print(f"synthetic rows: {len(manifest.select(provenance='synthetic'))}")
    return 0


def cmd_train_clf(args) -> int:
    cfg = _config(args)
    manifest = _manifest(cfg)
    for name in args.name or EXPERIMENT_CONFIGS:
        _, history = train_classifier_stage(manifest, cfg, name, Path(cfg.out) / "clf")
        best = min(history, key=lambda h: h.val_loss)
        print(f"{name}: best val loss {best.val_loss:.4f} at epoch {best.epoch}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    clf_dir = Path(cfg.out) / "clf"
    models = {name: clf.load_checkpoint(clf_dir / f"{name}.ckpt")
              for name in EXPERIMENT_CONFIGS if (clf_dir / f"{name}.ckpt").exists()}
    if not models:
        print(f"error: no classifier checkpoints in {clf_dir}; run `train-clf` first", file=sys.stderr)
        return 1
    reports = evaluate_stage(_manifest(cfg), models)
    emit_report(reports, cfg.out)
    _print_reports(reports)
    return 0


def cmd_pca_export(args) -> int:
    cfg = _config(args)
    paths = pca_stage(_manifest(cfg), cfg, cfg.out, Path(cfg.out) / "vae")
    for path in paths.values():
        print(path)
    return 0


def cmd_run_experiment(args) -> int:
    cfg = _config(args)
    summary = run_experiment(cfg)
    _print_reports(summary["reports"])
    return 0


def _print_reports(reports) -> None:
    for name, m in reports.items():
        per_class = " ".join(f"{100 * a:6.2f}" for a in m.per_class_accuracy)
        print(f"{name:16s} acc {100 * m.overall_accuracy:6.2f}  f1 {100 * m.macro_f1:6.2f}  per-class {per_class}")


COMMANDS = {
    "gen-toy": cmd_gen_toy,
    "split": cmd_split,
    "train-vae": cmd_train_vae,
    "generate": cmd_generate,
    "train-clf": cmd_train_clf,
    "evaluate": cmd_evaluate,
    "run-experiment": cmd_run_experiment,
    "pca-export": cmd_pca_export,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LatentAugError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
