"""
Generation Service.
Loads a ModelFile, runs the layer-wise Gibbs sampler from noise and writes the
final visible probabilities as an image grid.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from drbn.core.errors import DrbnError, ShapeError
from drbn.core.image_ops import export_grid
from drbn.core.math_core import make_rng
from drbn.core.network import generate
from drbn.storage.model_store import load
from drbn.utils.logger import logger


@dataclass
class GenerationResult:
    success: bool
    message: str = ""
    output_path: Optional[Path] = None
    n_images: int = 0
    mean_pixel_variance: float = float("nan")


def image_view(images: np.ndarray) -> np.ndarray:
    """(n, H, W, 1) or (n, H, W) states → n×H×W; a flat 784 input is shown as 28×28."""
    if images.ndim == 4 and images.shape[-1] == 1:
        return images[..., 0]
    if images.ndim == 3:
        return images
    if images.ndim == 2:
        side = int(round(np.sqrt(images.shape[1])))
        if side * side == images.shape[1]:
            return images.reshape(images.shape[0], side, side)
    raise ShapeError(f"cannot display states of shape {images.shape[1:]} as grayscale images")


def run_generation(
    model_path: Path,
    output_path: Path,
    n_steps: int,
    n_images: int,
    seed: int,
    cols: int,
) -> GenerationResult:
    try:
        net = load(model_path)
        logger.info(f"Generating {n_images} images with {n_steps} Gibbs steps (seed {seed})")
        probs = generate(net, n_images, n_steps, make_rng(seed))
        images = image_view(probs)
        path = export_grid(images, cols, output_path)
    except (DrbnError, OSError) as exc:
        logger.error(f"Generation from {model_path} failed: {exc}")
        return GenerationResult(success=False, message=str(exc))
    # per-image variance across pixels; binarized noise sits at 0.25
    variance = float(np.mean(np.var(images.reshape(n_images, -1), axis=1)))
    return GenerationResult(
        success=True,
        message=f"wrote {n_images} samples to {path}",
        output_path=path,
        n_images=n_images,
        mean_pixel_variance=variance,
    )
