"""
Trainer Module.
Joint persistent-contrastive-divergence training of every layer of a network.

One update:
  1. data term   – one sampled upward pass of the minibatch gives x^(l);
  2. model term  – k up-and-down cycles of the N persistent particles; the
                   states of the last downward pass give x^(l)_pcd;
  3. each layer's loss  mean F_l(x^(l)) − mean F_l(x^(l)_pcd)  is
     differentiated analytically and all layers take an Adam step together,
     every gradient having been computed from the pre-step parameters.
"""

import math
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from drbn.config.settings import train_settings
from drbn.core.errors import ConfigError, EmptyBatchError, ShapeError
from drbn.core.math_core import DenseTensor, Rng, bernoulli_sample, split_rng
from drbn.core.network import (
    Drbn,
    LayerParams,
    as_layer_input,
    downward_pass,
    free_energy_gap,
    layer_free_energy,
    layer_free_energy_grad,
    upward_pass,
)
from drbn.core.optim import AdamState, adam_step, init_adam
from drbn.utils.logger import logger


# ─── Configuration ────────────────────────────────────────────────────────────
class TrainConfig(BaseModel):
    """PCD(k, N) with minibatch M, Adam hyperparameters and bookkeeping cadence."""
    model_config = ConfigDict(frozen=True)

    k: int = Field(default=train_settings.K, ge=1)
    n_particles: int = Field(default=train_settings.PARTICLES, ge=1)
    batch_size: int = Field(default=train_settings.BATCH, ge=1)
    epochs: int = Field(default=train_settings.EPOCHS, ge=0)
    learning_rate: float = Field(default=train_settings.LR, ge=0.0)
    beta1: float = Field(default=train_settings.BETA1, ge=0.0, lt=1.0)
    beta2: float = Field(default=train_settings.BETA2, ge=0.0, lt=1.0)
    epsilon: float = Field(default=train_settings.EPSILON, gt=0.0)
    init_std: float = Field(default=train_settings.INIT_STD, gt=0.0)
    seed: int = Field(default=0, ge=0)
    eval_every: int = Field(default=train_settings.EVAL_EVERY, ge=0)
    checkpoint_every: int = Field(default=train_settings.CHECKPOINT_EVERY, ge=0)


# ─── State ────────────────────────────────────────────────────────────────────
@dataclass
class PcdState:
    """N persistent fantasy particles at the visible layer and the stream that advances them."""
    particles: DenseTensor
    rng: Rng
    t: int = 0


@dataclass
class TrainingState:
    """Everything needed to continue a run bit-for-bit."""
    net: Drbn
    pcd: PcdState
    optimizers: list[AdamState]
    rng: Rng                     # data-term sampling stream
    seed: int
    batch_size: Optional[int] = None  # minibatch the epoch position refers to
    epoch: int = 0
    batch_index: int = 0
    step: int = 0


@dataclass
class StepResult:
    net: Drbn
    pcd: PcdState
    opt_states: list[AdamState]
    losses: list[float]


@dataclass
class TrainLogRecord:
    step: int
    epoch: int
    losses: list[float]
    free_energy_gap: Optional[float]
    wall_time: float
    timestamp: str
    noise_gap: Optional[float] = None

    def to_line(self) -> str:
        """`step=… epoch=… loss_0=… … fe_gap=… noise_gap=… wall=… time=…`, one record per line."""
        parts = [f"step={self.step}", f"epoch={self.epoch}"]
        parts += [f"loss_{i}={loss:.10g}" for i, loss in enumerate(self.losses)]
        parts += [f"fe_gap={_fmt(self.free_energy_gap)}", f"noise_gap={_fmt(self.noise_gap)}"]
        parts += [f"wall={self.wall_time:.3f}", f"time={self.timestamp}"]
        return " ".join(parts)


def _fmt(value: Optional[float]) -> str:
    return "nan" if value is None else f"{value:.10g}"


@dataclass
class FitResult:
    net: Drbn
    log: list[TrainLogRecord] = field(default_factory=list)
    state: Optional[TrainingState] = None


TrainCallback = Callable[[TrainLogRecord, Drbn], None]


def init_pcd(net: Drbn, n_particles: int, rng: Rng) -> PcdState:
    """Particles start as Bernoulli(0.5) noise, never as data."""
    dtype = net.layers[0].W.dtype
    noise = np.full((n_particles,) + net.input_shape, 0.5, dtype=dtype)
    return PcdState(particles=bernoulli_sample(noise, rng), rng=rng, t=0)


def init_training_state(net: Drbn, config: TrainConfig) -> TrainingState:
    data_rng, pcd_rng = split_rng(config.seed, 2)
    optimizers = [
        init_adam(layer.as_dict(), config.learning_rate, config.beta1, config.beta2, config.epsilon)
        for layer in net.layers
    ]
    return TrainingState(
        net=net,
        pcd=init_pcd(net, config.n_particles, pcd_rng),
        optimizers=optimizers,
        rng=data_rng,
        seed=config.seed,
        batch_size=config.batch_size,
    )


# ─── Gradient Terms ───────────────────────────────────────────────────────────
def collect_data_terms(minibatch: DenseTensor, net: Drbn, rng: Rng) -> list[DenseTensor]:
    """Sampled upward pass of the minibatch; entry l is the visible-side input of layer l."""
    if minibatch.shape[0] == 0:
        raise EmptyBatchError("collect_data_terms got an empty minibatch")
    record = upward_pass(minibatch, net, rng)
    return [as_layer_input(record.states[level], layer) for level, layer in enumerate(net.layers)]


def advance_particles(pcd: PcdState, net: Drbn, k: int) -> list[DenseTensor]:
    """
    Run k up-and-down cycles on all particles, store the new visible states in
    `pcd`, and return the per-layer states of the last downward pass.
    """
    if k < 1:
        raise ValueError(f"k must be ≥ 1, got {k}")
    down = None
    for _ in range(k):
        up = upward_pass(pcd.particles, net, pcd.rng)
        down = downward_pass(up.states[-1], net, pcd.rng)
        pcd.particles = down.states[0]
    return [as_layer_input(down.states[level], layer) for level, layer in enumerate(net.layers)]


def layer_loss(data_states: DenseTensor, particle_states: DenseTensor, layer: LayerParams) -> float:
    """(1/M) Σ F(x_i) − (1/N) Σ F(x_j)."""
    if data_states.shape[0] == 0 or particle_states.shape[0] == 0:
        raise EmptyBatchError("layer_loss needs nonempty data and particle batches")
    return float(np.mean(layer_free_energy(layer, data_states)) - np.mean(layer_free_energy(layer, particle_states)))


def layer_loss_grad(
    data_states: DenseTensor,
    particle_states: DenseTensor,
    layer: LayerParams,
) -> dict[str, DenseTensor]:
    """∂ layer_loss / ∂θ: data-term mean ∂F/∂θ minus particle-term mean ∂F/∂θ."""
    if data_states.shape[0] == 0 or particle_states.shape[0] == 0:
        raise EmptyBatchError("layer_loss_grad needs nonempty data and particle batches")
    g_data = layer_free_energy_grad(layer, data_states)
    g_model = layer_free_energy_grad(layer, particle_states)
    return {name: g_data[name] - g_model[name] for name in g_data}


# ─── Update ───────────────────────────────────────────────────────────────────
def train_step(
    minibatch: DenseTensor,
    net: Drbn,
    pcd: PcdState,
    opt_states: Sequence[AdamState],
    config: TrainConfig,
    rng: Rng,
) -> StepResult:
    """One simultaneous update of every layer. `pcd` advances in place."""
    if len(opt_states) != net.n_layers:
        raise ShapeError(f"{len(opt_states)} optimizer states for {net.n_layers} layers")

    data_terms = collect_data_terms(minibatch, net, rng)
    particle_terms = advance_particles(pcd, net, config.k)

    grads = [layer_loss_grad(d, p, layer) for d, p, layer in zip(data_terms, particle_terms, net.layers)]
    losses = [layer_loss(d, p, layer) for d, p, layer in zip(data_terms, particle_terms, net.layers)]

    new_layers: list[LayerParams] = []
    new_states: list[AdamState] = []
    for layer, grad, opt in zip(net.layers, grads, opt_states):
        arrays, opt_next = adam_step(layer.as_dict(), grad, opt)
        new_layers.append(layer.with_arrays(arrays))
        new_states.append(opt_next)

    pcd.t += 1
    return StepResult(net=net.replace_layers(new_layers), pcd=pcd, opt_states=new_states, losses=losses)


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    """Seeded shuffle for one epoch; depends only on (seed, epoch) so resumed runs agree."""
    return np.random.default_rng(np.random.SeedSequence([seed, epoch])).permutation(n)


_NOISE_STREAM = 2**32 - 1


def noise_reference(shape: tuple[int, ...], seed: int, dtype=np.float64) -> DenseTensor:
    """Bernoulli(0.5) images drawn from a stream of their own; identical for every call with `seed`."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _NOISE_STREAM])))
    return bernoulli_sample(np.full(shape, 0.5, dtype=dtype), rng)


def _reconcile_resumed(state: TrainingState, config: TrainConfig) -> None:
    """
    The epoch position only has meaning for the minibatch it was written
    with, so a different batch size is rejected. A new learning rate is
    applied to the restored optimizers; their moments are kept.
    """
    if state.batch_size is not None and state.batch_size != config.batch_size:
        raise ConfigError(
            f"checkpoint was written with minibatch {state.batch_size}, config asks for {config.batch_size}"
        )
    if state.pcd.particles.shape[0] != config.n_particles:
        raise ConfigError(
            f"checkpoint holds {state.pcd.particles.shape[0]} particles, config asks for {config.n_particles}"
        )
    state.batch_size = config.batch_size
    previous = {opt.lr for opt in state.optimizers}
    if previous != {config.learning_rate}:
        logger.info(f"Learning rate {sorted(previous)} from checkpoint replaced by {config.learning_rate}")
        for opt in state.optimizers:
            opt.lr = config.learning_rate


def fit(
    dataset: DenseTensor,
    net: Drbn,
    config: TrainConfig,
    callbacks: Sequence[TrainCallback] = (),
    *,
    state: Optional[TrainingState] = None,
    held_out: Optional[DenseTensor] = None,
    max_steps: Optional[int] = None,
    checkpoint_hook: Optional[Callable[[TrainingState], None]] = None,
) -> FitResult:
    """
    Train for config.epochs passes over shuffled minibatches, keeping the same
    particles for the whole run. Pass a restored `state` to resume; `max_steps`
    stops early with the state positioned for a later resume.
    """
    n = dataset.shape[0]
    if n == 0:
        raise EmptyBatchError("fit needs a nonempty dataset")
    if state is None:
        state = init_training_state(net, config)
    else:
        _reconcile_resumed(state, config)

    noise = None
    if held_out is not None:
        noise = noise_reference(held_out.shape, state.seed, held_out.dtype)

    M = config.batch_size
    n_batches = math.ceil(n / M)
    if n % M:
        logger.warning(f"Dataset size {n} is not a multiple of the minibatch {M}; last batch has {n % M}")

    log: list[TrainLogRecord] = []
    started = time.perf_counter()
    steps_taken = 0
    logger.info(
        f"Training {state.net.n_layers}-layer network on {n} examples: "
        f"PCD({config.k}, {config.n_particles}), M={M}, epochs={config.epochs}, start step={state.step}"
    )

    for epoch in range(state.epoch, config.epochs):
        order = epoch_permutation(state.seed, epoch, n)
        epoch_losses: list[list[float]] = []
        for batch_index in range(state.batch_index, n_batches):
            if max_steps is not None and steps_taken >= max_steps:
                state.epoch, state.batch_index = epoch, batch_index
                return FitResult(net=state.net, log=log, state=state)

            batch = dataset[order[batch_index * M:(batch_index + 1) * M]]
            result = train_step(batch, state.net, state.pcd, state.optimizers, config, state.rng)
            state.net, state.optimizers = result.net, result.opt_states
            state.step += 1
            state.batch_index = batch_index + 1
            steps_taken += 1
            epoch_losses.append(result.losses)

            gap = noise_gap = None
            if held_out is not None and config.eval_every and state.step % config.eval_every == 0:
                gap = free_energy_gap(state.net, held_out, state.pcd.particles)
                noise_gap = free_energy_gap(state.net, held_out, noise)

            record = TrainLogRecord(
                step=state.step,
                epoch=epoch,
                losses=result.losses,
                free_energy_gap=gap,
                noise_gap=noise_gap,
                wall_time=time.perf_counter() - started,
                timestamp=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            )
            log.append(record)
            logger.debug(record.to_line())
            if callbacks:
                snapshot = state.net.copy()
                for callback in callbacks:
                    callback(record, snapshot)
            if checkpoint_hook is not None and config.checkpoint_every and state.step % config.checkpoint_every == 0:
                checkpoint_hook(state)

        state.epoch, state.batch_index = epoch + 1, 0
        if epoch_losses:
            means = np.mean(np.asarray(epoch_losses), axis=0)
            logger.info(
                f"Epoch {epoch + 1}/{config.epochs} done (step {state.step}): mean layer losses "
                + ", ".join(f"{m:.4f}" for m in means)
            )

    return FitResult(net=state.net, log=log, state=state)
