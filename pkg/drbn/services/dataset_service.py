"""
Dataset Service.
Resolves the `--data` argument of a command into binarized training,
held-out and (when labeled) test images. Networks see them as (H, W, 1).

`--data` forms:
    mnist            → <DATA_DIR>/mnist (the four standard IDX files)
    <dir with IDX>   → MNIST-style directory
    <file.idx|ubyte> → a single IDX image file (no labels)
    <dir of images>  → binary masks, `<dir>/{train,test}/...` or flat
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from drbn.config.settings import file_settings, semisup_settings
from drbn.core.idx_reader import MNIST_FILES, Dataset, load_idx, load_mnist, split_validation
from drbn.core.image_ops import binarize, load_image_dir
from drbn.utils.logger import logger
from drbn.utils.validators import RunConfig


@dataclass
class DatasetBundle:
    """Binarized splits ready for the trainer and the classifier."""
    source: str
    train: Dataset
    validation: Optional[Dataset] = None
    test: Optional[Dataset] = None

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.train.images.shape[1:]) + (1,)


def resolve_data_path(data: str) -> Path:
    if data == "mnist":
        return file_settings.DATA_DIR / "mnist"
    return Path(data).expanduser()


def detect_source(path: Path) -> str:
    """mnist | idx | images, from what is on disk."""
    if path.is_file():
        return "idx"
    names = {p.name for p in path.iterdir()}
    stems = {n[:-3] if n.endswith(".gz") else n for n in names}
    if MNIST_FILES["train_images"] in stems or MNIST_FILES["train_images"].replace("-idx", ".idx") in stems:
        return "mnist"
    return "images"


def _binarize_split(dataset: Optional[Dataset], config: RunConfig, offset: int) -> Optional[Dataset]:
    if dataset is None:
        return None
    seed = None if config.seed is None else config.seed + offset
    images = binarize(dataset.images, config.binarize, config.threshold, seed)
    return Dataset(images=images, labels=dataset.labels, split=dataset.split)


def load_dataset(config: RunConfig, n_validation: Optional[int] = None) -> DatasetBundle:
    """
    Load, split and binarize. `limit` keeps the first n training examples.
    Raises FileNotFoundError for a missing path (a usage error at the CLI).
    """
    if not config.data:
        raise FileNotFoundError("no dataset given (use --data)")
    path = resolve_data_path(config.data)
    if not path.exists():
        raise FileNotFoundError(f"dataset path does not exist: {path}")
    source = config.data_source or detect_source(path)
    n_validation = semisup_settings.VALIDATION_SIZE if n_validation is None else n_validation

    validation = test = None
    if source == "mnist":
        train, test = load_mnist(path)
        if n_validation:
            train, validation = split_validation(train, min(n_validation, len(train) - 1))
    elif source == "idx":
        train = load_idx(path)
    else:
        train = load_image_dir(path, "train", config.image_size, config.threshold)
        if (path / "test").is_dir():
            test = load_image_dir(path, "test", config.image_size, config.threshold)

    if config.limit is not None and config.limit < len(train):
        train = train.subset(np.arange(config.limit))
        logger.info(f"Limited training split to the first {config.limit} examples")

    bundle = DatasetBundle(
        source=source,
        train=_binarize_split(train, config, 0),
        validation=_binarize_split(validation, config, 1),
        test=_binarize_split(test, config, 2),
    )
    logger.info(
        f"Dataset '{config.data}' ({source}): train={len(bundle.train)}"
        + (f", validation={len(bundle.validation)}" if bundle.validation is not None else "")
        + (f", test={len(bundle.test)}" if bundle.test is not None else "")
        + f", binarize={config.binarize}"
    )
    return bundle
