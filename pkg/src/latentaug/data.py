"""Dataset manifests, Netpbm image I/O, stratified splits, and the toy dataset.

On-disk layout of a dataset root::

    <root>/manifest.csv                   image_id,path,label,split,provenance
    <root>/images/<class>/<image_id>.pgm  binary P5 (P6 for colour), maxval 255

Manifest paths are relative to the directory holding ``manifest.csv``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import ContractError, DataError, DomainError, InsufficientDataError, ParseError

MANIFEST_HEADER = ("image_id", "path", "label", "split", "provenance")
SPLITS = ("train", "val", "test", "unassigned")
PROVENANCES = ("real", "synthetic")


# -- images -------------------------------------------------------------------------

@dataclass
class ImageBuffer:
    width: int
    height: int
    channels: int
    pixels: np.ndarray  # (height, width, channels), values in [0, 1]

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise DomainError(f"channels must be 1 or 3, got {self.channels}")
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[..., None]
        if px.shape != (self.height, self.width, self.channels):
            raise DomainError(f"pixel array {px.shape} does not match "
                              f"{self.height}x{self.width}x{self.channels}")
        self.pixels = np.clip(px, 0.0, 1.0)

    @classmethod
    def from_array(cls, pixels) -> "ImageBuffer":
        px = np.asarray(pixels, dtype=np.float64)
        if px.ndim == 2:
            px = px[..., None]
        return cls(px.shape[1], px.shape[0], px.shape[2], px)


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def decode_netpbm(raw: bytes) -> ImageBuffer:
    if raw[:2] not in (b"P5", b"P6"):
        raise ParseError(f"unsupported magic {raw[:2]!r}; expected P5 or P6", 0)
    channels = 1 if raw[:2] == b"P5" else 3
    pos = 2
    values = []
    for name in ("width", "height", "maxval"):
        m = _TOKEN.match(raw, pos)
        if m is None or not m.group(1).isdigit():
            raise ParseError(f"bad {name} field", pos)
        values.append(int(m.group(1)))
        pos = m.end()
    width, height, maxval = values
    if width <= 0 or height <= 0:
        raise ParseError("image dimensions must be positive", pos)
    if maxval != 255:
        raise ParseError(f"only maxval 255 is supported, got {maxval}", pos)
    if pos >= len(raw) or raw[pos : pos + 1] not in (b" ", b"\n", b"\r", b"\t"):
        raise ParseError("missing whitespace after header", pos)
    pos += 1
    need = width * height * channels
    if len(raw) - pos < need:
        raise ParseError(f"pixel data truncated: need {need} bytes, have {len(raw) - pos}", len(raw))
    data = np.frombuffer(raw, dtype=np.uint8, count=need, offset=pos)
    pixels = data.reshape(height, width, channels).astype(np.float64) / 255.0
    return ImageBuffer(width, height, channels, pixels)


def encode_netpbm(image: ImageBuffer) -> bytes:
    magic = b"P5" if image.channels == 1 else b"P6"
    header = magic + f"\n{image.width} {image.height}\n255\n".encode("ascii")
    quantized = np.floor(np.clip(image.pixels, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    return header + quantized.tobytes(order="C")


def read_image(path) -> ImageBuffer:
    return decode_netpbm(Path(path).read_bytes())


def write_image(path, image: ImageBuffer) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_netpbm(image))


# -- manifest -----------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestRow:
    image_id: str
    path: str
    label: int
    split: str = "unassigned"
    provenance: str = "real"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise DataError(f"{self.image_id}: unknown split {self.split!r}")
        if self.provenance not in PROVENANCES:
            raise DataError(f"{self.image_id}: unknown provenance {self.provenance!r}")


@dataclass
class DatasetManifest:
    root: Path
    rows: list[ManifestRow] = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        self.validate()

    def validate(self) -> None:
        seen: set[str] = set()
        for row in self.rows:
            if row.image_id in seen:
                raise DataError(f"duplicate image_id {row.image_id!r}")
            seen.add(row.image_id)
        check_no_leakage(self.rows)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def num_classes(self) -> int:
        return max((r.label for r in self.rows), default=-1) + 1

    def select(self, split: str | None = None, provenance: str | None = None,
               label: int | None = None) -> list[ManifestRow]:
        return [r for r in self.rows
                if (split is None or r.split == split)
                and (provenance is None or r.provenance == provenance)
                and (label is None or r.label == label)]

    def abspath(self, row: ManifestRow) -> Path:
        return self.root / row.path

    def load_pixels(self, rows: list[ManifestRow]) -> np.ndarray:
        """Stack images of ``rows`` into an (N, H, W, C) array."""
        if not rows:
            return np.zeros((0, 0, 0, 0))
        return np.stack([read_image(self.abspath(r)).pixels for r in rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in self.rows:
            writer.writerow((r.image_id, r.path, r.label, r.split, r.provenance))
        return buf.getvalue()

    def save(self, path=None) -> Path:
        """Write the CSV; paths are rewritten relative to the target directory."""
        path = Path(path) if path is not None else self.root / "manifest.csv"
        path.parent.mkdir(parents=True, exist_ok=True)
        new_root = path.parent
        if new_root.resolve() != self.root.resolve():
            rows = [replace(r, path=Path(os.path.relpath(self.root / r.path, new_root)).as_posix())
                    for r in self.rows]
            moved = DatasetManifest(new_root, rows)
        else:
            moved = self
        self.validate()
        path.write_bytes(moved.to_csv().encode("utf-8"))
        return path

    def digest(self, split: str | None = None) -> str:
        rows = self.rows if split is None else self.select(split=split)
        text = "\n".join(f"{r.image_id},{r.label},{r.split},{r.provenance}" for r in rows)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        if path.is_dir():
            path = path / "manifest.csv"
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if tuple(header or ()) != MANIFEST_HEADER:
                raise DataError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
            rows = []
            for lineno, rec in enumerate(reader, start=2):
                if len(rec) != len(MANIFEST_HEADER):
                    raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(rec)}")
                try:
                    label = int(rec[2])
                except ValueError:
                    raise DataError(f"{path}:{lineno}: label {rec[2]!r} is not an integer") from None
                rows.append(ManifestRow(rec[0], rec[1], label, rec[3], rec[4]))
        return cls(path.parent, rows)


def check_no_leakage(rows) -> None:
    """Raise DataError if any synthetic row sits in a validation or test split."""
    for r in rows:
        if r.provenance == "synthetic" and r.split in ("val", "test"):
            raise DataError(f"synthetic image {r.image_id!r} placed in {r.split} split")


# -- splitting ----------------------------------------------------------------------

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _assign(manifest: DatasetManifest, fraction: float, seed: int, stream_name: str,
            source: tuple[str, ...], target: str, rest: str | None) -> DatasetManifest:
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"fraction must lie in (0, 1), got {fraction}")
    rng = rngmod.stream(seed, stream_name)
    new_split: dict[str, str] = {}
    for label in range(manifest.num_classes):
        eligible = [r for r in manifest.rows
                    if r.label == label and r.provenance == "real" and r.split in source]
        if not eligible:
            continue
        if len(eligible) < 2:
            raise InsufficientDataError(f"class {label} has {len(eligible)} eligible image(s); need >= 2")
        k = min(max(1, _round_half_up(fraction * len(eligible))), len(eligible) - 1)
        picked = set(rng.permutation(len(eligible))[:k].tolist())
        for idx, r in enumerate(eligible):
            if idx in picked:
                new_split[r.image_id] = target
            elif rest is not None:
                new_split[r.image_id] = rest
    rows = [replace(r, split=new_split.get(r.image_id, r.split)) for r in manifest.rows]
    return DatasetManifest(manifest.root, rows)


def stratified_split(manifest: DatasetManifest, test_fraction: float = 0.2,
                     seed: int = 42) -> DatasetManifest:
    """Per class, move round(fraction * n) (at least 1) real images to ``test``.

    Every other real row becomes ``train``; synthetic rows keep their split.
    """
    return _assign(manifest, test_fraction, seed, "split",
                   source=SPLITS, target="test", rest="train")


def carve_validation(manifest: DatasetManifest, val_fraction: float = 0.15,
                     seed: int = 42) -> DatasetManifest:
    """Stratified move of real ``train`` rows to ``val``."""
    return _assign(manifest, val_fraction, seed, "split/val",
                   source=("train",), target="val", rest=None)


# -- toy dataset --------------------------------------------------------------------

@dataclass
class ToySpec:
    """Imbalanced grating dataset standing in for a small clinical image set.

    Class k is a sinusoidal grating at ``orientations[k]`` degrees and
    ``frequencies[k]`` cycles per image. Each non-majority image mixes its own
    wave with the majority-class wave using a weight drawn from
    U(0, overlap * blend_scale[k]), then a tanh contrast curve pushes most
    pixels toward 0 or 1. When overlap > 0 every image also gets a random
    phase spread over ``phase_jitter`` full cycles and a tilt drawn from
    +-``orientation_jitter`` degrees; with overlap 0 each class is one fixed
    pattern. Additive Gaussian noise is clipped to [0, 1].
    """

    counts: tuple[int, ...] = (65, 91, 165)
    size: int = 32
    orientations: tuple[float, ...] = (0.0, 60.0, 120.0)
    frequencies: tuple[float, ...] = (2.0, 3.0, 3.5)
    contrast: float = 4.0
    noise: float = 0.1
    overlap: float = 0.9
    blend_scale: tuple[float, ...] = (0.5, 1.0, 0.0)
    phase_jitter: float = 1.0
    orientation_jitter: float = 10.0
    seed: int = 42

    def __post_init__(self):
        self.counts = tuple(int(c) for c in self.counts)
        if not self.counts or any(c <= 0 for c in self.counts):
            raise ContractError(f"class counts must be positive, got {self.counts}")
        k = len(self.counts)
        for name in ("orientations", "frequencies", "blend_scale"):
            if len(getattr(self, name)) < k:
                raise ContractError(f"{name} needs one entry per class ({k})")
        if min(self.noise, self.overlap, self.phase_jitter, self.orientation_jitter) < 0:
            raise ContractError("noise, overlap and jitter settings must be non-negative")
        if self.size < 3:
            raise ContractError("image size must be at least 3")


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    yy, xx = np.mgrid[0:size, 0:size]
    return (xx + 0.5) / size, (yy + 0.5) / size


def _wave(size: int, orientation_deg, freq: float, phase=0.0) -> np.ndarray:
    """Sinusoid per (orientation, phase) pair; scalars broadcast against arrays."""
    xx, yy = _grid(size)
    theta = np.deg2rad(np.asarray(orientation_deg, dtype=np.float64)).reshape(-1, 1, 1)
    proj = xx[None] * np.cos(theta) + yy[None] * np.sin(theta)
    phase = np.asarray(phase, dtype=np.float64).reshape(-1, 1, 1)
    out = np.sin(2.0 * np.pi * freq * proj + phase)
    return out[0] if out.shape[0] == 1 else out


def toy_images(spec: ToySpec) -> list[np.ndarray]:
    """Per class, an (n_k, size, size) array of images in [0, 1]."""
    majority = int(np.argmax(spec.counts))
    out = []
    for label, n in enumerate(spec.counts):
        rng = rngmod.stream(spec.seed, f"toy/{label}")
        varied = spec.overlap > 0
        phases = rng.uniform(0.0, 2.0 * np.pi * spec.phase_jitter if varied else 0.0, size=n)
        reach = 0.0 if label == majority else min(1.0, spec.overlap * spec.blend_scale[label])
        weights = rng.uniform(0.0, 1.0, size=n) * reach
        noise = rng.standard_normal((n, spec.size, spec.size))
        tilt = rng.uniform(-1.0, 1.0, size=n) * (spec.orientation_jitter if varied else 0.0)
        shape = (n, spec.size, spec.size)
        own = np.broadcast_to(_wave(spec.size, spec.orientations[label] + tilt, spec.frequencies[label], phases), shape)
        # blend in the wave domain, then sharpen, so pixels stay near 0 or 1
        majority_wave = np.broadcast_to(_wave(spec.size, spec.orientations[majority] + tilt,
                                              spec.frequencies[majority], phases), shape)
        wave = (1.0 - weights)[:, None, None] * own + weights[:, None, None] * majority_wave
        img = 0.5 + 0.5 * np.tanh(spec.contrast * wave)
        if spec.noise > 0:
            img = img + spec.noise * noise
        out.append(np.clip(img, 0.0, 1.0))
    return out


def generate_toy_dataset(spec: ToySpec, root) -> DatasetManifest:
    """Write toy images and ``manifest.csv`` under ``root``."""
    root = Path(root)
    rows = []
    for label, images in enumerate(toy_images(spec)):
        for idx, px in enumerate(images):
            image_id = f"c{label}_{idx:04d}"
            rel = f"images/{label}/{image_id}.pgm"
            write_image(root / rel, ImageBuffer.from_array(px))
            rows.append(ManifestRow(image_id, rel, label, "unassigned", "real"))
    manifest = DatasetManifest(root, rows)
    manifest.save()
    return manifest
