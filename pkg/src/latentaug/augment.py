"""Synthetic samples from within-class latent interpolation, plus classical
pixel-permutation augmentations (rotations and mirroring)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, DomainError, InsufficientDataError
from .vae import VaeModel, decode, encode

CLASSICAL_OPS = ("rot90", "rot180", "rot270", "flip_h", "flip_v")
INVERSE_OP = {"rot90": "rot270", "rot270": "rot90", "rot180": "rot180",
              "flip_h": "flip_h", "flip_v": "flip_v"}


@dataclass(frozen=True)
class InterpolationSpec:
    i: int
    j: int
    alpha: float

    def __post_init__(self):
        if self.i == self.j:
            raise DomainError("interpolation needs two distinct images")
        if not 0.0 <= self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in [0, 1], got {self.alpha}")


@dataclass
class AugmentPlan:
    counts: dict[int, int] = field(default_factory=dict)
    alpha_range: tuple[float, float] = (0.2, 0.8)
    classical_ops: tuple[str, ...] = CLASSICAL_OPS
    seed: int = 42

    def __post_init__(self):
        lo, hi = self.alpha_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise DomainError(f"alpha range must satisfy 0 <= lo <= hi <= 1, got {self.alpha_range}")
        if any(c < 0 for c in self.counts.values()):
            raise DomainError("synthetic counts must be non-negative")
        unknown = set(self.classical_ops) - set(CLASSICAL_OPS)
        if unknown:
            raise DomainError(f"unknown classical ops {sorted(unknown)}")


@dataclass
class SyntheticImage:
    pixels: np.ndarray  # (H, W, C)
    spec: InterpolationSpec
    provenance: str = "synthetic"


def interpolate(z1, z2, alpha: float) -> np.ndarray:
    """Convex combination ``alpha * z1 + (1 - alpha) * z2``.

    The weights are (1 - (1 - alpha), 1 - alpha) rather than (alpha, 1 - alpha):
    both lie on the 2**-53 grid where ``w -> 1 - w`` is exact, which makes
    ``interpolate(z1, z2, a) == interpolate(z2, z1, 1 - a)`` hold bit for bit.
    """
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise DimensionError(f"latent shapes differ: {z1.shape} vs {z2.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    w2 = 1.0 - float(alpha)
    w1 = 1.0 - w2
    if w2 == 0.0:
        return z1.copy()
    if w1 == 0.0:
        return z2.copy()
    out = w1 * z1 + w2 * z2
    return np.where(z1 == z2, z1, out)


def _pair_cycle(n: int, count: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Distinct ordered pairs, reshuffled each time the full set is exhausted."""
    ii, jj = np.nonzero(~np.eye(n, dtype=bool))
    pairs: list[tuple[int, int]] = []
    while len(pairs) < count:
        order = rng.permutation(ii.size)
        take = order[: count - len(pairs)]
        pairs.extend(zip(ii[take].tolist(), jj[take].tolist()))
    return pairs


def generate_synthetic(model: VaeModel, class_images, count: int, plan: AugmentPlan,
                       rng: np.random.Generator) -> list[SyntheticImage]:
    """Decode ``count`` interpolations between posterior means of class images."""
    images = np.asarray(class_images, dtype=np.float64)
    if images.ndim == 3:
        images = images[..., None]
    if images.shape[0] < 2:
        raise InsufficientDataError(f"need >= 2 class images to interpolate, got {images.shape[0]}")
    if count < 0:
        raise DomainError("count must be non-negative")
    if count == 0:
        return []
    mu, _ = encode(model, images.reshape(images.shape[0], -1))
    mu = mu.data
    lo, hi = plan.alpha_range
    pairs = _pair_cycle(images.shape[0], count, rng)
    alphas = rng.uniform(lo, hi, size=count)
    specs = [InterpolationSpec(i, j, float(a)) for (i, j), a in zip(pairs, alphas)]
    z = np.stack([interpolate(mu[s.i], mu[s.j], s.alpha) for s in specs])
    decoded = decode(model, z).data.reshape(count, *model.image_shape)
    return [SyntheticImage(decoded[k], specs[k]) for k in range(count)]


def classical_augment(image, op: str) -> np.ndarray:
    """Apply one rotation/mirror to an (H, W) or (H, W, C) image.

    ``rot90`` turns the image a quarter turn clockwise.
    """
    image = np.asarray(image)
    if op not in CLASSICAL_OPS:
        raise DomainError(f"unknown classical op {op!r}")
    if op in ("rot90", "rot270") and image.shape[0] != image.shape[1]:
        raise DimensionError(f"{op} needs a square image, got {image.shape[:2]}")
    if op == "rot90":
        out = np.rot90(image, k=-1, axes=(0, 1))
    elif op == "rot180":
        out = np.rot90(image, k=2, axes=(0, 1))
    elif op == "rot270":
        out = np.rot90(image, k=1, axes=(0, 1))
    elif op == "flip_h":
        out = image[:, ::-1]
    else:
        out = image[::-1]
    return np.ascontiguousarray(out)


def random_classical(images: np.ndarray, ops, rng: np.random.Generator) -> np.ndarray:
    """Per image, apply one op drawn uniformly from identity + ``ops``."""
    ops = tuple(ops)
    if not ops:
        return images
    choice = rng.integers(0, len(ops) + 1, size=images.shape[0])
    out = images.copy()
    for k, c in enumerate(choice):
        if c:
            out[k] = classical_augment(images[k], ops[c - 1])
    return out
