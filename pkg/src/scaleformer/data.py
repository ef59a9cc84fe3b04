"""Synthetic shapes dataset and PGM dataset directories.

Each image holds one disk or axis-aligned rectangle per foreground class on a
flat background. Shapes never overlap, so every class owns at least one pixel
of its mask. Gaussian noise is added to the image only; masks are exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from scaleformer.errors import ConfigError, ContractError
from scaleformer.fileio import read_pgm, write_pgm

BACKGROUND_INTENSITY = 0.1
NOISE_SIGMA = 0.05
MAX_PLACEMENT_TRIES = 200


@dataclass
class Shape:
    kind: str  # "disk" or "rect"
    class_id: int
    center: tuple[int, int]
    extent: tuple[int, int]  # (radius, radius) for disks, half-sizes for rectangles


@dataclass
class SyntheticSample:
    image: np.ndarray  # (H, W) float in [0, 1]
    mask: np.ndarray  # (H, W) int64 labels
    seed: int
    shapes: list[Shape] = field(default_factory=list)
    noise: float = NOISE_SIGMA


def class_intensity(class_id: int, num_classes: int) -> float:
    """Background plus evenly spaced foreground intensities in [0.1, 0.9]."""
    if class_id == 0:
        return BACKGROUND_INTENSITY
    return BACKGROUND_INTENSITY + 0.8 * class_id / (num_classes - 1)


def rasterize(shape: Shape, size: int) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size]
    cy, cx = shape.center
    ry, rx = shape.extent
    if shape.kind == "disk":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= ry * ry
    return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)


def _place(rng: np.random.Generator, class_id: int, size: int, taken: np.ndarray) -> tuple[Shape, np.ndarray]:
    lo, hi = max(1, size // 12), max(2, size // 6)
    kind = "disk" if rng.random() < 0.5 else "rect"
    if kind == "disk":
        r = int(rng.integers(lo, hi + 1))
        extent = (r, r)
    else:
        extent = (int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1)))
    for _ in range(MAX_PLACEMENT_TRIES):
        # Keep the whole shape inside the image; overlapping placements are resampled.
        cy = int(rng.integers(extent[0], size - extent[0]))
        cx = int(rng.integers(extent[1], size - extent[1]))
        shape = Shape(kind, class_id, (cy, cx), extent)
        raster = rasterize(shape, size)
        if not (raster & taken).any():
            return shape, raster
    raise ContractError(f"could not place class {class_id} without overlap in a {size}x{size} image")


def make_sample(seed: int, size: int, num_classes: int, noise: float = NOISE_SIGMA) -> SyntheticSample:
    if num_classes < 2:
        raise ConfigError(f"num_classes must be >= 2, got {num_classes}")
    if size < 8:
        raise ConfigError(f"image size must be >= 8, got {size}")
    rng = np.random.default_rng(seed)
    mask = np.zeros((size, size), dtype=np.int64)
    taken = np.zeros((size, size), dtype=bool)
    shapes = []
    for c in range(1, num_classes):
        shape, raster = _place(rng, c, size, taken)
        # One-pixel margin so shapes of different classes never touch.
        grown = raster.copy()
        grown[1:] |= raster[:-1]
        grown[:-1] |= raster[1:]
        grown[:, 1:] |= raster[:, :-1]
        grown[:, :-1] |= raster[:, 1:]
        taken |= grown
        mask[raster] = c
        shapes.append(shape)
    intensities = np.array([class_intensity(c, num_classes) for c in range(num_classes)])
    image = intensities[mask]
    if noise > 0:
        image = np.clip(image + rng.normal(0.0, noise, size=image.shape), 0.0, 1.0)
    return SyntheticSample(image, mask, seed, shapes, noise)


def generate_synthetic(seed: int, n: int, size: int, num_classes: int, noise: float = NOISE_SIGMA) -> list[SyntheticSample]:
    """``n`` samples; sample i uses a child seed derived from (seed, i)."""
    seeds = np.random.SeedSequence(seed).generate_state(n) if n > 0 else []
    return [make_sample(int(s), size, num_classes, noise) for s in seeds]


def stack(samples: list[SyntheticSample], dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """(N, 1, H, W) images and (N, H, W) masks."""
    images = np.stack([s.image for s in samples])[:, None].astype(dtype)
    masks = np.stack([s.mask for s in samples]).astype(np.int64)
    return images, masks


# PGM dataset directories -------------------------------------------------------


def save_dataset(samples: list[SyntheticSample], out_dir) -> None:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    for i, s in enumerate(samples):
        write_pgm(out / "images" / f"{i:04d}.pgm", np.round(s.image * 255.0).astype(np.uint8))
        write_pgm(out / "masks" / f"{i:04d}.pgm", s.mask.astype(np.uint8))


def load_dataset(data_dir) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Images scaled to [0, 1] as (N, 1, H, W) float32, masks (N, H, W) int64, and sample names."""
    root = Path(data_dir)
    names = sorted(p.name for p in (root / "images").glob("*.pgm"))
    if not names:
        raise ContractError(f"{root}: no images/*.pgm files")
    images, masks = [], []
    for name in names:
        mpath = root / "masks" / name
        if not mpath.exists():
            raise ContractError(f"{root}: image {name} has no mask")
        images.append(read_pgm(root / "images" / name).astype(np.float32) / 255.0)
        masks.append(read_pgm(mpath).astype(np.int64))
    shapes = {im.shape for im in images} | {m.shape for m in masks}
    if len(shapes) != 1:
        raise ContractError(f"{root}: images and masks differ in size: {sorted(shapes)}")
    return np.stack(images)[:, None], np.stack(masks), [Path(n).stem for n in names]
