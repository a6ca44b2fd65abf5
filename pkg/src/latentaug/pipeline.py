"""Experiment pipeline: split, per-class VAEs, synthesis, four classifier
configurations, evaluation, and report emission.

All randomness flows from ``RunConfig.seed`` through named streams
(``split``, ``vae/<class>``, ``augment/<class>``, ``clf``).
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import os
import shutil
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import classifier as clf
from . import rng as rngmod
from . import vae as vaemod
from .augment import CLASSICAL_OPS, AugmentPlan, generate_synthetic
from .data import DatasetManifest, ImageBuffer, ManifestRow, carve_validation, stratified_split, write_image
from .errors import ContractError, DataError, LatentAugError
from .report import MetricsReport, build_confusion, emit_report, metrics_from_confusion, pca_project, write_pca_csv

logger = logging.getLogger(__name__)

EXPERIMENT_CONFIGS = ("real_noaug", "real_aug", "real_gen_noaug", "real_gen_aug")
DESK_CLASSICAL_OPS = ("rot180",)

PROFILES: dict[str, dict] = {
    "desk": {
        "vae_latent_dim": 32,
        "vae_hidden": [512, 256],
        "vae_epochs": 300,
        "vae_lr": 1e-3,
        "clf_epochs": 150,
        # flips and quarter turns swap the toy's 60/120 degree classes
        "classical_ops": list(DESK_CLASSICAL_OPS),
    },
    "paper": {
        "vae_latent_dim": 256,
        "vae_hidden": [512, 256],
        "vae_epochs": 1000,
        "vae_lr": 1e-4,
        "clf_epochs": 150,
        "classical_ops": list(CLASSICAL_OPS),
    },
}


@dataclass
class RunConfig:
    seed: int = 42
    data_root: str = "data"
    out: str = "runs/latest"
    profile: str = "desk"
    test_fraction: float = 0.2
    val_fraction: float = 0.15
    vae_latent_dim: int = 32
    vae_hidden: list[int] = field(default_factory=lambda: [512, 256])
    vae_epochs: int = 300
    vae_lr: float = 1e-3
    vae_batch_size: int = 24
    synth_count: int = 300
    alpha_lo: float = 0.2
    alpha_hi: float = 0.8
    classical_ops: list[str] = field(default_factory=lambda: list(DESK_CLASSICAL_OPS))
    augment_synthetic: bool = False
    clf_arch: str = "small-cnn"
    clf_epochs: int = 150
    clf_lr: float = 5e-4
    clf_batch_size: int = 24
    clf_patience: int = 10
    clf_factor: float = 10.0
    clf_threshold: float = 1e-4
    pca_features: str = "pixels"

    def __post_init__(self):
        if self.seed < 0:
            raise ContractError("seed must be non-negative")
        if self.profile not in PROFILES:
            raise ContractError(f"unknown profile {self.profile!r}; choose from {sorted(PROFILES)}")
        if self.pca_features not in ("pixels", "latent"):
            raise ContractError("pca_features must be 'pixels' or 'latent'")
        if self.clf_arch not in clf.ARCHITECTURES:
            raise ContractError(f"unknown classifier architecture {self.clf_arch!r}")

    def vae_config(self) -> vaemod.VaeConfig:
        return vaemod.VaeConfig(self.vae_latent_dim, tuple(self.vae_hidden), self.vae_epochs,
                                self.vae_lr, self.vae_batch_size)

    def clf_config(self, classical: bool) -> clf.ClassifierConfig:
        return clf.ClassifierConfig(
            arch=self.clf_arch, epochs=self.clf_epochs, lr=self.clf_lr,
            batch_size=self.clf_batch_size, patience=self.clf_patience,
            factor=self.clf_factor, threshold=self.clf_threshold,
            classical_ops=tuple(self.classical_ops) if classical else ())

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


FIELD_NAMES = {f.name for f in dataclasses.fields(RunConfig)}


def resolve_config(profile: str | None = None, config_file=None, overrides: dict | None = None) -> RunConfig:
    """Profile defaults < config file < explicit overrides."""
    values: dict = {}
    file_values: dict = {}
    if config_file is not None:
        file_values = json.loads(Path(config_file).read_text(encoding="utf-8"))
        if not isinstance(file_values, dict):
            raise ContractError("config file must hold a flat JSON object")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    chosen = overrides.get("profile") or file_values.get("profile") or profile or "desk"
    if chosen not in PROFILES:
        raise ContractError(f"unknown profile {chosen!r}; choose from {sorted(PROFILES)}")
    values.update(PROFILES[chosen])
    values.update(file_values)
    values.update(overrides)
    values["profile"] = chosen
    unknown = set(values) - FIELD_NAMES
    if unknown:
        raise ContractError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**values)


def save_resolved(config: RunConfig, out_dir) -> Path:
    path = Path(out_dir) / "resolved_config.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


class StageError(LatentAugError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("LATENTAUG_THREADS", "1")))
    except ValueError:
        return 1


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- stages -------------------------------------------------------------------------

def split_stage(manifest: DatasetManifest, config: RunConfig) -> DatasetManifest:
    split = stratified_split(manifest, config.test_fraction, config.seed)
    return carve_validation(split, config.val_fraction, config.seed)


def _require_split(manifest: DatasetManifest) -> None:
    if not manifest.select(split="train", provenance="real"):
        raise DataError("manifest has no train split; run the `split` command first")


def train_vaes(manifest: DatasetManifest, config: RunConfig, out_dir) -> dict[int, Path]:
    """One VAE per class on that class's real training images."""
    _require_split(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vcfg = config.vae_config()

    def train_one(label: int) -> Path:
        rows = manifest.select(split="train", provenance="real", label=label)
        images = manifest.load_pixels(rows)
        model, history = vaemod.train_class_vae(images, vcfg, rngmod.stream(config.seed, f"vae/{label}"),
                                                class_label=label)
        path = out_dir / f"vae_class{label}.ckpt"
        vaemod.save_checkpoint(model, path)
        with open(out_dir / f"vae_class{label}_loss.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["epoch", "loss"])
            writer.writerows((e, repr(v)) for e, v in enumerate(history))
        logger.info("vae class %d: loss %.2f -> %.2f", label, history[0], history[-1])
        return path

    labels = list(range(manifest.num_classes))
    with ThreadPoolExecutor(max_workers=min(_threads(), len(labels))) as pool:
        paths = list(pool.map(train_one, labels))
    return dict(zip(labels, paths))


def generate_stage(manifest: DatasetManifest, config: RunConfig, ckpt_dir, count: int,
                   image_root=None) -> DatasetManifest:
    """Decode ``count`` interpolations per class and append them as synthetic train rows.

    Earlier synthetic rows are dropped first so regeneration is idempotent.
    """
    _require_split(manifest)
    ckpt_dir = Path(ckpt_dir)
    image_root = Path(image_root) if image_root is not None else manifest.root
    rows = [r for r in manifest.rows if r.provenance != "synthetic"]
    plan = AugmentPlan({k: count for k in range(manifest.num_classes)},
                       (config.alpha_lo, config.alpha_hi), tuple(config.classical_ops), config.seed)
    meta_rows = []
    for label in range(manifest.num_classes):
        path = ckpt_dir / f"vae_class{label}.ckpt"
        if not path.exists():
            raise DataError(f"missing VAE checkpoint for class {label}: {path}")
        if count == 0:
            continue
        model = vaemod.load_checkpoint(path)
        real = manifest.select(split="train", provenance="real", label=label)
        synth = generate_synthetic(model, manifest.load_pixels(real), count, plan,
                                   rngmod.stream(config.seed, f"augment/{label}"))
        for k, s in enumerate(synth):
            image_id = f"syn{label}_{k:04d}"
            file_path = image_root / "images" / str(label) / f"{image_id}.pgm"
            write_image(file_path, ImageBuffer.from_array(s.pixels))
            rel = Path(os.path.relpath(file_path, manifest.root)).as_posix()
            rows.append(ManifestRow(image_id, rel, label, "train", "synthetic"))
            meta_rows.append((image_id, label, real[s.spec.i].image_id, real[s.spec.j].image_id,
                              repr(s.spec.alpha)))
    if meta_rows:
        image_root.mkdir(parents=True, exist_ok=True)
        with open(image_root / "synthetic_meta.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["image_id", "class", "parent_i", "parent_j", "alpha"])
            writer.writerows(meta_rows)
    return DatasetManifest(manifest.root, rows)


def _labeled(manifest: DatasetManifest, rows: list[ManifestRow], augment_synthetic: bool) -> clf.LabeledImages:
    images = manifest.load_pixels(rows)
    labels = np.array([r.label for r in rows], dtype=np.int64)
    augmentable = np.array([r.provenance == "real" or augment_synthetic for r in rows], dtype=bool)
    return clf.LabeledImages(images, labels, augmentable)


def config_rows(manifest: DatasetManifest, name: str) -> list[ManifestRow]:
    if name not in EXPERIMENT_CONFIGS:
        raise ContractError(f"unknown experiment configuration {name!r}")
    with_gen = name.startswith("real_gen")
    return [r for r in manifest.select(split="train") if with_gen or r.provenance == "real"]


def train_classifier_stage(manifest: DatasetManifest, config: RunConfig, name: str, out_dir):
    """Train one of the four experiment configurations; writes checkpoint + history."""
    _require_split(manifest)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train = _labeled(manifest, config_rows(manifest, name), config.augment_synthetic)
    val = _labeled(manifest, manifest.select(split="val"), False)
    classical = name.endswith("_aug") and not name.endswith("noaug")
    model, history = clf.train_classifier(train, val, config.clf_config(classical),
                                          rngmod.stream(config.seed, "clf"),
                                          num_classes=manifest.num_classes)
    clf.save_checkpoint(model, out_dir / f"{name}.ckpt")
    with open(out_dir / f"{name}_history.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_loss", "val_acc", "lr"])
        writer.writerows((h.epoch, repr(h.train_loss), repr(h.val_loss), repr(h.val_acc), repr(h.lr))
                         for h in history)
    return model, history


def evaluate_stage(manifest: DatasetManifest, models: dict[str, clf.ClassifierModel]) -> dict[str, MetricsReport]:
    rows = manifest.select(split="test")
    if not rows:
        raise DataError("manifest has no test split; run the `split` command first")
    images = manifest.load_pixels(rows)
    labels = np.array([r.label for r in rows])
    reports = {}
    for name, model in models.items():
        pred = clf.predict(model, images).argmax(axis=1)
        reports[name] = metrics_from_confusion(build_confusion(labels, pred, manifest.num_classes))
    return reports


def pca_stage(manifest: DatasetManifest, config: RunConfig, out_dir, ckpt_dir=None) -> dict[int, Path]:
    """Per class, PCA of real + synthetic training images -> pca_<class>.csv."""
    out_dir = Path(out_dir)
    paths = {}
    for label in range(manifest.num_classes):
        rows = [r for r in manifest.select(split="train", label=label)]
        if len(rows) < 2:
            continue
        feats = manifest.load_pixels(rows).reshape(len(rows), -1)
        if config.pca_features == "latent":
            if ckpt_dir is None:
                raise ContractError("latent PCA features need VAE checkpoints")
            model = vaemod.load_checkpoint(Path(ckpt_dir) / f"vae_class{label}.ckpt")
            feats = vaemod.encode(model, feats)[0].data
        res = pca_project(feats, 2)
        paths[label] = write_pca_csv(out_dir / f"pca_{label}.csv", label,
                                     [r.provenance for r in rows], res.coords)
    return paths


# -- full experiment ------------------------------------------------------------------

def run_experiment(config: RunConfig) -> dict:
    """Run every stage; returns a summary with metrics and artifact hashes."""
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    save_resolved(config, out)
    stage = "load"
    try:
        manifest = DatasetManifest.load(config.data_root)
        manifest = DatasetManifest(manifest.root, [r for r in manifest.rows if r.provenance == "real"])
        stage = "split"
        manifest = split_stage(manifest, config)
        test_digest = manifest.digest("test")
        manifest.save(out / "manifest.csv")
        stage = "train-vae"
        ckpts = train_vaes(manifest, config, out / "vae")
        stage = "generate"
        syn_dir = out / "synthetic"
        if syn_dir.exists():
            shutil.rmtree(syn_dir)
        manifest = generate_stage(manifest, config, out / "vae", config.synth_count, image_root=syn_dir)
        manifest.save(out / "manifest.csv")
        models = {}
        for name in EXPERIMENT_CONFIGS:
            stage = f"train-clf:{name}"
            if manifest.digest("test") != test_digest:
                raise DataError("test split changed between configurations")
            models[name], _ = train_classifier_stage(manifest, config, name, out / "clf")
        stage = "evaluate"
        reports = evaluate_stage(manifest, models)
        emit_report(reports, out)
        stage = "pca-export"
        pca_stage(manifest, config, out, out / "vae")
    except LatentAugError as exc:
        raise StageError(stage, exc) from exc
    return {
        "reports": reports,
        "test_digest": test_digest,
        "checkpoint_hashes": {p.name: file_sha256(p) for p in
                              sorted((out / "vae").glob("*.ckpt")) + sorted((out / "clf").glob("*.ckpt"))},
    }
