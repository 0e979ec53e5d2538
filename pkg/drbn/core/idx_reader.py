"""
IDX Reader Module.
Parses the big-endian IDX containers used for MNIST:

    u32 magic   0x00000803 (images, 3 dims) | 0x00000801 (labels, 1 dim)
    u32 dims[]  item count, then rows and columns for image files
    u8  data[]  pixels row-major (scaled to [0, 1] by /255) or labels

Files may be gzip-compressed (`.gz`).
"""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from drbn.core.errors import IdxFormatError, ShapeError
from drbn.core.math_core import DenseTensor, default_dtype, make_rng
from drbn.utils.logger import logger

IMAGE_MAGIC = 0x00000803      # 2051
LABEL_MAGIC = 0x00000801      # 2049

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass
class Dataset:
    """Images n×H×W in [0, 1], optional integer labels, and a split tag."""
    images: DenseTensor
    labels: Optional[np.ndarray] = None
    split: str = "train"

    def __post_init__(self):
        if self.labels is not None and len(self.labels) != len(self.images):
            raise ShapeError(f"{len(self.labels)} labels for {len(self.images)} images")

    def __len__(self) -> int:
        return int(self.images.shape[0])

    def subset(self, index: np.ndarray, split: Optional[str] = None) -> "Dataset":
        labels = None if self.labels is None else self.labels[index]
        return Dataset(images=self.images[index], labels=labels, split=split or self.split)


def _read_bytes(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def _parse_idx(raw: bytes, expected_magic: int, n_dims: int, path: str) -> tuple[list[int], bytes]:
    if len(raw) < 4:
        raise IdxFormatError("file too short for the magic number", len(raw), path)
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic != expected_magic:
        raise IdxFormatError(
            f"bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0, path
        )
    header_end = 4 + 4 * n_dims
    if len(raw) < header_end:
        raise IdxFormatError("truncated dimension header", len(raw), path)
    dims = list(struct.unpack_from(f">{n_dims}I", raw, 4))
    payload_len = int(np.prod(dims))
    if len(raw) < header_end + payload_len:
        raise IdxFormatError(
            f"truncated payload: need {payload_len} bytes, found {len(raw) - header_end}",
            len(raw), path,
        )
    if len(raw) > header_end + payload_len:
        raise IdxFormatError("trailing bytes after payload", header_end + payload_len, path)
    return dims, raw[header_end:]


def read_idx_images(path: Path) -> DenseTensor:
    raw = _read_bytes(Path(path))
    dims, payload = _parse_idx(raw, IMAGE_MAGIC, 3, str(path))
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(dims)
    return pixels.astype(default_dtype()) / 255.0


def read_idx_labels(path: Path) -> np.ndarray:
    raw = _read_bytes(Path(path))
    dims, payload = _parse_idx(raw, LABEL_MAGIC, 1, str(path))
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64).reshape(dims)


def load_idx(images_path: Path, labels_path: Optional[Path] = None, split: str = "train") -> Dataset:
    """Load an image file and, optionally, its label file into a Dataset."""
    images = read_idx_images(Path(images_path))
    labels = None
    if labels_path is not None:
        labels = read_idx_labels(Path(labels_path))
        if labels.shape[0] != images.shape[0]:
            raise IdxFormatError(
                f"label count {labels.shape[0]} does not match image count {images.shape[0]}",
                4, str(labels_path),
            )
    logger.info(f"Loaded {images.shape[0]} {split} images of {images.shape[1]}×{images.shape[2]} from {Path(images_path).name}")
    return Dataset(images=images, labels=labels, split=split)


def _resolve(root: Path, stem: str) -> Path:
    for candidate in (root / stem, root / f"{stem}.gz", root / stem.replace("-idx", ".idx")):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(f"{stem}[.gz] not found under {root}")


def load_mnist(root: Path) -> tuple[Dataset, Dataset]:
    """Standard MNIST directory → (train 60k, test 10k)."""
    root = Path(root)
    train = load_idx(_resolve(root, MNIST_FILES["train_images"]), _resolve(root, MNIST_FILES["train_labels"]), "train")
    test = load_idx(_resolve(root, MNIST_FILES["test_images"]), _resolve(root, MNIST_FILES["test_labels"]), "test")
    return train, test


def split_validation(dataset: Dataset, n_validation: int = 10000) -> tuple[Dataset, Dataset]:
    """Hold out the last n_validation examples (60k → 50k train + 10k validation)."""
    if not 0 <= n_validation < len(dataset):
        raise ValueError(f"validation size {n_validation} must be in [0, {len(dataset)})")
    cut = len(dataset) - n_validation
    return (
        dataset.subset(np.arange(cut), "train"),
        dataset.subset(np.arange(cut, len(dataset)), "validation"),
    )


def sample_label_subset(dataset: Dataset, n_labels: int, seed: int) -> Dataset:
    """Seeded uniform draw of n_labels labeled examples without replacement."""
    if dataset.labels is None:
        raise ValueError("dataset has no labels")
    if not 1 <= n_labels <= len(dataset):
        raise ValueError(f"label budget must be in [1, {len(dataset)}], got {n_labels}")
    index = np.sort(make_rng(seed).choice(len(dataset), size=n_labels, replace=False))
    return dataset.subset(index, f"labeled-{n_labels}")
