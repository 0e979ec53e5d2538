"""
Image Operations Module.
Binarization, center-crop + nearest-neighbor resize, image-directory ingestion
(Weizmann-style binary masks) and image-grid export.

Grid files are 8-bit grayscale: tiles laid out row-major, 1-pixel separators
of value 128 between tiles, value v ↦ round(255·v) (halves round up).
`.pgm` paths get binary PGM (P5, maxval 255); `.png` paths get PNG.
"""

import io
import math
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError

from drbn.core.errors import ImageFormatError, ShapeError
from drbn.core.idx_reader import Dataset
from drbn.core.math_core import DenseTensor, bernoulli_sample, default_dtype, make_rng
from drbn.utils.file_utils import atomic_write_bytes
from drbn.utils.logger import logger

SEPARATOR_VALUE = 128
IMAGE_SUFFIXES = {".pgm", ".pbm", ".ppm", ".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".gif"}


# ─── Binarization ─────────────────────────────────────────────────────────────
def binarize(
    images: DenseTensor,
    mode: str = "threshold",
    tau: float = 0.5,
    seed: Optional[int] = None,
) -> DenseTensor:
    """
    threshold: 1 iff pixel > tau.
    bernoulli: each pixel sampled as Bernoulli(pixel) from the given seed.
    """
    images = np.asarray(images)
    if np.any(images < 0.0) or np.any(images > 1.0):
        raise ValueError("binarize expects values in [0, 1]")
    dtype = images.dtype if np.issubdtype(images.dtype, np.floating) else default_dtype()
    if mode == "threshold":
        if not 0.0 <= tau <= 1.0:
            raise ValueError(f"threshold tau must be in [0, 1], got {tau}")
        return (images > tau).astype(dtype)
    if mode == "bernoulli":
        return bernoulli_sample(images.astype(dtype), make_rng(0 if seed is None else seed))
    raise ValueError(f"unknown binarization mode '{mode}' (threshold | bernoulli)")


# ─── Geometry ─────────────────────────────────────────────────────────────────
def center_crop_resize(images: DenseTensor, out_size: int) -> DenseTensor:
    """
    Crop the largest centered square, then nearest-neighbor resize to
    out_size×out_size. Output pixel i samples source row ⌊(i + ½)·S / out⌋,
    so binary inputs stay binary. Accepts H×W or n×H×W.
    """
    if out_size < 1:
        raise ValueError(f"out_size must be ≥ 1, got {out_size}")
    images = np.asarray(images)
    height, width = images.shape[-2:]
    if height < 1 or width < 1:
        raise ImageFormatError(f"cannot crop a zero-area image of {height}×{width}")
    side = min(height, width)
    top, left = (height - side) // 2, (width - side) // 2
    square = images[..., top:top + side, left:left + side]
    src = np.floor((np.arange(out_size) + 0.5) * side / out_size).astype(np.int64)
    return square[..., src[:, np.newaxis], src[np.newaxis, :]]


# ─── Grids ────────────────────────────────────────────────────────────────────
def quantize(images: DenseTensor) -> np.ndarray:
    """[0, 1] → uint8 via round-half-up of 255·v."""
    return np.floor(np.clip(images, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def tile_grid(images: DenseTensor, cols: int) -> np.ndarray:
    """n×H×W in [0, 1] → 8-bit mosaic of ⌈n/cols⌉ rows with 1-pixel separators."""
    images = np.asarray(images)
    if images.ndim == 4 and images.shape[-1] == 1:
        images = images[..., 0]
    if images.ndim != 3:
        raise ShapeError(f"grid export expects n×H×W images, got shape {images.shape}")
    n, height, width = images.shape
    if n < 1:
        raise ShapeError("grid export needs at least one image")
    if cols < 1:
        raise ValueError(f"cols must be ≥ 1, got {cols}")
    cols = min(cols, n)
    rows = math.ceil(n / cols)
    grid = np.full((rows * height + rows - 1, cols * width + cols - 1), SEPARATOR_VALUE, dtype=np.uint8)
    tiles = quantize(images)
    for index in range(rows * cols):
        r, c = divmod(index, cols)
        y, x = r * (height + 1), c * (width + 1)
        grid[y:y + height, x:x + width] = tiles[index] if index < n else 0
    return grid


def export_grid(images: DenseTensor, cols: int, path: Path) -> Path:
    """Write the tiled grid atomically as PGM (P5) or PNG, chosen by suffix."""
    path = Path(path)
    grid = tile_grid(images, cols)
    buffer = io.BytesIO()
    fmt = "PNG" if path.suffix.lower() == ".png" else "PPM"
    Image.fromarray(grid).save(buffer, format=fmt)
    atomic_write_bytes(path, buffer.getvalue())
    logger.info(f"Wrote {grid.shape[1]}×{grid.shape[0]} grid of {len(images)} images to {path}")
    return path


def read_grayscale(path: Path) -> np.ndarray:
    """Decode any Pillow-readable image to a uint8 H×W array."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("L"))
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageFormatError(f"cannot decode image {path}: {exc}") from exc


# ─── Image Directories ────────────────────────────────────────────────────────
def load_image_dir(root: Path, split: Optional[str] = None, out_size: int = 32, tau: float = 0.5) -> Dataset:
    """
    Binary-mask directory (e.g. Weizmann horses): `<root>/<split>/*` when the
    split directory exists, else `<root>/*`. Every image is center-cropped,
    resized to out_size×out_size and thresholded.
    """
    root = Path(root)
    folder = root / split if split and (root / split).is_dir() else root
    files = sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise FileNotFoundError(f"no images found in {folder}")
    images = []
    for file in files:
        pixels = read_grayscale(file).astype(default_dtype()) / 255.0
        images.append(center_crop_resize(pixels, out_size))
    stacked = binarize(np.stack(images), "threshold", tau)
    logger.info(f"Loaded {len(files)} images from {folder} as {out_size}×{out_size} binary masks")
    return Dataset(images=stacked, labels=None, split=split or "train")
