"""
Training Service.
Full generative training pipeline behind `train`:
  dataset → network (fresh or resumed) → joint PCD fit → artifacts.

Artifacts in the output directory:
    model.drbn        ModelFile (written even for zero epochs)
    checkpoint.drck   resumable training state
    train.log         one `key=value` record per step
    samples_<step>.pgm  periodic grids of data-probe reconstructions
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from drbn.config.settings import generate_settings, train_settings
from drbn.core.errors import ConfigError, DrbnError
from drbn.core.image_ops import export_grid
from drbn.core.math_core import make_rng
from drbn.core.network import Drbn, downward_pass, init_network, parse_architecture, upward_pass
from drbn.core.trainer import TrainConfig, TrainingState, TrainLogRecord, fit
from drbn.services.dataset_service import load_dataset
from drbn.storage.model_store import checkpoint, restore, save
from drbn.utils.file_utils import append_line, atomic_write_text, ensure_dir
from drbn.utils.logger import logger
from drbn.utils.validators import RunConfig

MODEL_FILE = "model.drbn"
CHECKPOINT_FILE = "checkpoint.drck"
LOG_FILE = "train.log"
PROBE_SIZE = 1000


@dataclass
class TrainingResult:
    """Outcome of one `train` invocation."""
    success: bool
    message: str = ""
    model_path: Optional[Path] = None
    checkpoint_path: Optional[Path] = None
    log_path: Optional[Path] = None
    sample_paths: list[Path] = field(default_factory=list)
    steps: int = 0
    final_losses: list[float] = field(default_factory=list)


# ─── Callbacks ────────────────────────────────────────────────────────────────
class TrainLogWriter:
    """Appends every TrainLogRecord to a line-delimited file."""

    def __init__(self, path: Path, fresh: bool = True):
        self.path = Path(path)
        if fresh:
            atomic_write_text(self.path, "")

    def __call__(self, record: TrainLogRecord, net: Drbn) -> None:
        append_line(self.path, record.to_line())


class SampleGridWriter:
    """
    Every `every` steps, renders the visible probabilities of one fixed-seed
    up-down pass started from the probe images.
    """

    def __init__(self, output_dir: Path, probe: np.ndarray, every: int, seed: int, cols: int = 10):
        self.output_dir = Path(output_dir)
        self.probe = probe
        self.every = every
        self.seed = seed
        self.cols = cols
        self.paths: list[Path] = []

    def __call__(self, record: TrainLogRecord, net: Drbn) -> None:
        if not self.every or record.step % self.every:
            return
        rng = make_rng(self.seed + record.step)
        up = upward_pass(self.probe, net, rng)
        down = downward_pass(up.states[-1], net, rng, sample_bottom=False)
        path = self.output_dir / f"samples_{record.step:07d}.pgm"
        self.paths.append(export_grid(down.probs[0], self.cols, path))


# ─── Pipeline ─────────────────────────────────────────────────────────────────
def _build_or_resume(run: RunConfig, config: TrainConfig, input_shape: tuple[int, ...], resume: Optional[Path]):
    if resume is not None:
        state = restore(resume)
        if state.net.input_shape != tuple(input_shape):
            raise ConfigError(
                f"checkpoint expects input {state.net.input_shape}, dataset provides {tuple(input_shape)}"
            )
        return state.net, state
    if not run.arch:
        raise ConfigError("train requires --arch (e.g. dense:500,dense:1000)")
    spec = parse_architecture(run.arch, input_shape)
    net = init_network(spec, make_rng(config.seed), std=config.init_std)
    return net, None


def run_training(
    run: RunConfig,
    config: TrainConfig,
    resume: Optional[Path] = None,
    max_steps: Optional[int] = None,
    sample_every: int = train_settings.SAMPLE_EVERY,
) -> TrainingResult:
    """
    Train per `config`, then save model and checkpoint. Configuration errors
    propagate; data, model-file and I/O failures come back as success=False.
    Nothing but the log and sample grids is written before the run succeeds.
    """
    try:
        return _train(run, config, resume, max_steps, sample_every)
    except ConfigError:
        raise
    except (DrbnError, OSError) as exc:
        logger.error(f"Training failed: {exc}")
        return TrainingResult(success=False, message=str(exc))


def _train(
    run: RunConfig,
    config: TrainConfig,
    resume: Optional[Path],
    max_steps: Optional[int],
    sample_every: int,
) -> TrainingResult:
    out_dir = ensure_dir(run.output_dir)
    bundle = load_dataset(run)
    data = bundle.train.images
    held_out = bundle.validation.images if bundle.validation is not None else None
    if held_out is not None and len(held_out) > PROBE_SIZE:
        held_out = held_out[:PROBE_SIZE]

    net, state = _build_or_resume(run, config, bundle.input_shape, resume)

    log_writer = TrainLogWriter(out_dir / LOG_FILE, fresh=state is None)
    n_probe = min(generate_settings.GRID_COLS * generate_settings.GRID_COLS, len(data))
    sampler = SampleGridWriter(out_dir, data[:n_probe], sample_every, config.seed, generate_settings.GRID_COLS)
    checkpoint_path = out_dir / CHECKPOINT_FILE

    def checkpoint_hook(s: TrainingState) -> None:
        checkpoint(s, checkpoint_path)

    result = fit(
        data, net, config, callbacks=[log_writer, sampler],
        state=state, held_out=held_out, max_steps=max_steps, checkpoint_hook=checkpoint_hook,
    )
    final_state = result.state

    model_path = save(result.net, out_dir / MODEL_FILE)
    checkpoint(final_state, checkpoint_path)
    message = f"trained {final_state.step} steps over {final_state.epoch} epochs; model at {model_path}"
    logger.info(message)
    return TrainingResult(
        success=True,
        message=message,
        model_path=model_path,
        checkpoint_path=checkpoint_path,
        log_path=log_writer.path,
        sample_paths=sampler.paths,
        steps=final_state.step,
        final_losses=result.log[-1].losses if result.log else [],
    )
