"""
Deep Restricted Boltzmann Network Module.
Stacks dense and convolutional RBM layers so that the hidden units of layer l
are the visible units of layer l+1. Energies and parameters live per layer;
no code path couples two layers except by passing states between them.

Architecture mini-language (comma separated, whitespace around commas allowed):
    dense:<hidden units>
    conv:<filters>x<filter size>[s<stride>]
e.g. "dense:500,dense:1000" or "conv:64x12s2,conv:128x5s2,dense:512".
A dense layer that follows a 3-D state flattens it in row-major (H, W, C) order.
"""

import re
from dataclasses import dataclass, field
from functools import singledispatch
from typing import Optional, Sequence, Union

import numpy as np

from drbn.core.conv_rbm import (
    ConvRbmParams,
    conv_energy,
    conv_free_energy,
    conv_free_energy_grad,
    conv_prob_h_given_v,
    conv_prob_v_given_h,
    init_conv_rbm,
)
from drbn.core.errors import ArchitectureSpecError, ShapeError
from drbn.core.math_core import DenseTensor, Rng, bernoulli_sample, conv_output_hw
from drbn.core.rbm import (
    RbmParams,
    energy,
    free_energy,
    free_energy_grad,
    init_rbm,
    prob_h_given_v,
    prob_v_given_h,
)
from drbn.utils.logger import logger

LayerParams = Union[RbmParams, ConvRbmParams]


# ─── Specs ────────────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class LayerSpec:
    """Declarative shape of one layer; `units` is P for dense and K for conv."""
    kind: str                           # dense | conv
    visible_shape: tuple[int, ...]
    units: int
    filter_size: int = 0
    stride: int = 1
    flatten: bool = False               # visible is the row-major flattening of the previous state

    @property
    def hidden_shape(self) -> tuple[int, ...]:
        if self.kind == "dense":
            return (self.units,)
        out_h, out_w = conv_output_hw(self.visible_shape[0], self.visible_shape[1], self.filter_size, self.stride)
        return out_h, out_w, self.units

    @property
    def weight_count(self) -> int:
        if self.kind == "dense":
            return int(np.prod(self.visible_shape)) * self.units
        return self.units * self.filter_size * self.filter_size * self.visible_shape[2]

    def describe(self) -> str:
        if self.kind == "dense":
            return f"dense {int(np.prod(self.visible_shape))}→{self.units}"
        hh = "×".join(str(d) for d in self.hidden_shape)
        vv = "×".join(str(d) for d in self.visible_shape)
        return f"conv {vv} → {hh} ({self.units} filters {self.filter_size}×{self.filter_size}, stride {self.stride})"


@dataclass(frozen=True)
class NetworkSpec:
    """Input shape plus the ordered layer specs."""
    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a network needs at least one layer")
        shape = tuple(self.input_shape)
        for index, spec in enumerate(self.layers):
            _check_junction(shape, spec, index)
            shape = spec.hidden_shape

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def top_shape(self) -> tuple[int, ...]:
        return self.layers[-1].hidden_shape


def _check_junction(incoming: tuple[int, ...], spec: LayerSpec, index: int) -> None:
    if spec.flatten:
        if int(np.prod(incoming)) != int(np.prod(spec.visible_shape)) or len(spec.visible_shape) != 1:
            raise ShapeError(
                f"layer {index}: cannot flatten {incoming} into visible shape {spec.visible_shape}"
            )
    elif tuple(incoming) != tuple(spec.visible_shape):
        raise ShapeError(f"layer {index}: visible shape {spec.visible_shape} does not match incoming {incoming}")


_ITEM = re.compile(r"(?P<kind>[a-z]+):")
_INT = re.compile(r"\d+")


def parse_architecture(text: str, input_shape: Sequence[int]) -> NetworkSpec:
    """Parse the architecture mini-language against an input shape (e.g. (28, 28, 1))."""
    shape = tuple(int(d) for d in input_shape)
    layers: list[LayerSpec] = []
    pos = 0
    n = len(text)

    def skip_ws(p: int) -> int:
        while p < n and text[p].isspace():
            p += 1
        return p

    def read_int(p: int, what: str) -> tuple[int, int]:
        m = _INT.match(text, p)
        if not m:
            raise ArchitectureSpecError(f"expected {what}", p, text)
        value = int(m.group())
        if value < 1:
            raise ArchitectureSpecError(f"{what} must be positive", p, text)
        return value, m.end()

    pos = skip_ws(pos)
    if pos >= n:
        raise ArchitectureSpecError("empty architecture", pos, text)

    while True:
        item_start = pos
        m = _ITEM.match(text, pos)
        if not m:
            raise ArchitectureSpecError("expected 'dense:' or 'conv:'", pos, text)
        kind = m.group("kind")
        pos = m.end()
        if kind == "dense":
            units, pos = read_int(pos, "hidden unit count")
            flatten = len(shape) != 1
            visible = (int(np.prod(shape)),)
            spec = LayerSpec("dense", visible, units, flatten=flatten)
        elif kind == "conv":
            if len(shape) != 3:
                raise ArchitectureSpecError(
                    f"conv layer needs an H×W×C input, incoming state is {shape}", item_start, text
                )
            units, pos = read_int(pos, "filter count")
            if pos >= n or text[pos] != "x":
                raise ArchitectureSpecError("expected 'x' between filter count and filter size", pos, text)
            filter_size, pos = read_int(pos + 1, "filter size")
            stride = 1
            if pos < n and text[pos] == "s":
                stride, pos = read_int(pos + 1, "stride")
            spec = LayerSpec("conv", shape, units, filter_size=filter_size, stride=stride)
            try:
                spec.hidden_shape
            except ShapeError as exc:
                raise ArchitectureSpecError(str(exc), item_start, text) from exc
        else:
            raise ArchitectureSpecError(f"unknown layer kind '{kind}'", item_start, text)

        layers.append(spec)
        shape = spec.hidden_shape
        pos = skip_ws(pos)
        if pos >= n:
            break
        if text[pos] != ",":
            raise ArchitectureSpecError("expected ',' between layers", pos, text)
        pos = skip_ws(pos + 1)

    return NetworkSpec(input_shape=tuple(int(d) for d in input_shape), layers=tuple(layers))


def network_weight_count(spec: Union[NetworkSpec, "Drbn"]) -> int:
    """Total weight entries, biases excluded."""
    if isinstance(spec, Drbn):
        spec = spec.spec
    return sum(layer.weight_count for layer in spec.layers)


# ─── Per-layer dispatch ───────────────────────────────────────────────────────
@singledispatch
def hidden_probs(layer, x: DenseTensor) -> DenseTensor:
    raise TypeError(f"unsupported layer type {type(layer).__name__}")


@hidden_probs.register
def _(layer: RbmParams, x: DenseTensor) -> DenseTensor:
    return prob_h_given_v(x, layer)


@hidden_probs.register
def _(layer: ConvRbmParams, x: DenseTensor) -> DenseTensor:
    return conv_prob_h_given_v(x, layer)


@singledispatch
def visible_probs(layer, h: DenseTensor) -> DenseTensor:
    raise TypeError(f"unsupported layer type {type(layer).__name__}")


@visible_probs.register
def _(layer: RbmParams, h: DenseTensor) -> DenseTensor:
    return prob_v_given_h(h, layer)


@visible_probs.register
def _(layer: ConvRbmParams, h: DenseTensor) -> DenseTensor:
    return conv_prob_v_given_h(h, layer)


@singledispatch
def layer_free_energy(layer, x: DenseTensor) -> DenseTensor:
    raise TypeError(f"unsupported layer type {type(layer).__name__}")


@layer_free_energy.register
def _(layer: RbmParams, x: DenseTensor) -> DenseTensor:
    return free_energy(x, layer)


@layer_free_energy.register
def _(layer: ConvRbmParams, x: DenseTensor) -> DenseTensor:
    return conv_free_energy(x, layer)


@singledispatch
def layer_free_energy_grad(layer, x_batch: DenseTensor) -> dict[str, DenseTensor]:
    raise TypeError(f"unsupported layer type {type(layer).__name__}")


@layer_free_energy_grad.register
def _(layer: RbmParams, x_batch: DenseTensor) -> dict[str, DenseTensor]:
    return free_energy_grad(x_batch, layer).as_dict()


@layer_free_energy_grad.register
def _(layer: ConvRbmParams, x_batch: DenseTensor) -> dict[str, DenseTensor]:
    return conv_free_energy_grad(x_batch, layer).as_dict()


@singledispatch
def layer_energy(layer, v: DenseTensor, h: DenseTensor) -> DenseTensor:
    raise TypeError(f"unsupported layer type {type(layer).__name__}")


@layer_energy.register
def _(layer: RbmParams, v: DenseTensor, h: DenseTensor) -> DenseTensor:
    return energy(v, h, layer)


@layer_energy.register
def _(layer: ConvRbmParams, v: DenseTensor, h: DenseTensor) -> DenseTensor:
    return conv_energy(v, h, layer)


def layer_spec_of(layer: LayerParams, flatten: bool = False) -> LayerSpec:
    if isinstance(layer, ConvRbmParams):
        return LayerSpec("conv", layer.visible_shape, layer.n_filters, layer.filter_size, layer.stride)
    return LayerSpec("dense", layer.visible_shape, layer.n_hidden, flatten=flatten)


def as_layer_input(x: DenseTensor, layer: LayerParams) -> DenseTensor:
    """Reshape a batch of states (n, ...) to the layer's visible shape (flatten junction)."""
    return x.reshape((x.shape[0],) + tuple(layer.visible_shape))


# ─── Network ──────────────────────────────────────────────────────────────────
@dataclass
class Drbn:
    """Instantiated network: per-layer parameters plus the input shape they chain from."""
    layers: list[LayerParams]
    input_shape: tuple[int, ...]

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        if not self.layers:
            raise ShapeError("a network needs at least one layer")
        self.spec  # validates the chain

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def spec(self) -> NetworkSpec:
        specs = []
        shape = self.input_shape
        for layer in self.layers:
            flatten = isinstance(layer, RbmParams) and tuple(shape) != tuple(layer.visible_shape)
            specs.append(layer_spec_of(layer, flatten=flatten))
            shape = layer.hidden_shape
        return NetworkSpec(self.input_shape, tuple(specs))

    def state_shape(self, level: int) -> tuple[int, ...]:
        """Shape of x^(level): the input for level 0, else the hidden shape of layer level−1."""
        return self.input_shape if level == 0 else tuple(self.layers[level - 1].hidden_shape)

    def replace_layers(self, layers: Sequence[LayerParams]) -> "Drbn":
        return Drbn(layers=list(layers), input_shape=self.input_shape)

    def copy(self) -> "Drbn":
        return Drbn(layers=[layer.copy() for layer in self.layers], input_shape=self.input_shape)


def init_network(spec: NetworkSpec, rng: Rng, std: float = 0.01, dtype=None) -> Drbn:
    """Gaussian N(0, std²) weights, zero biases, for every layer of `spec`."""
    layers: list[LayerParams] = []
    for layer_spec in spec.layers:
        if layer_spec.kind == "dense":
            layers.append(init_rbm(layer_spec.visible_shape[0], layer_spec.units, rng, std, dtype))
        else:
            layers.append(init_conv_rbm(
                layer_spec.visible_shape, layer_spec.units, layer_spec.filter_size,
                layer_spec.stride, rng, std, dtype,
            ))
    net = Drbn(layers=layers, input_shape=spec.input_shape)
    logger.info(f"Initialized network: {', '.join(s.describe() for s in spec.layers)}")
    return net


@dataclass
class PassRecord:
    """
    States x^(0..L) of one pass and the probabilities they were sampled from.
    probs[l] is None at the level the pass started from.
    """
    states: list[DenseTensor] = field(default_factory=list)
    probs: list[Optional[DenseTensor]] = field(default_factory=list)


def _check_batch(x: DenseTensor, shape: tuple[int, ...], what: str) -> None:
    if x.ndim < 1 or int(np.prod(x.shape[1:])) != int(np.prod(shape)):
        raise ShapeError(f"{what} batch shape {x.shape} does not match {shape}")


def upward_pass(x0: DenseTensor, net: Drbn, rng: Rng, sample: bool = True) -> PassRecord:
    """
    x^(l+1) ~ Bernoulli(p(h | x^(l))) layer by layer. With sample=False the
    probabilities themselves are propagated (deterministic feature pass).
    """
    _check_batch(x0, net.input_shape, "input")
    x = x0.reshape((x0.shape[0],) + net.input_shape)
    record = PassRecord(states=[x], probs=[None])
    for layer in net.layers:
        p = hidden_probs(layer, as_layer_input(x, layer))
        x = bernoulli_sample(p, rng) if sample else p
        record.states.append(x)
        record.probs.append(p)
    return record


def downward_pass(x_top: DenseTensor, net: Drbn, rng: Rng, sample_bottom: bool = True) -> PassRecord:
    """
    x^(l) ~ Bernoulli(p(v | x^(l+1))) from the top layer down. The bottom
    probability is always recorded; with sample_bottom=False the bottom state
    is that probability rather than a sample.
    """
    L = net.n_layers
    _check_batch(x_top, net.state_shape(L), "top state")
    n = x_top.shape[0]
    states: list[Optional[DenseTensor]] = [None] * (L + 1)
    probs: list[Optional[DenseTensor]] = [None] * (L + 1)
    states[L] = x_top.reshape((n,) + net.state_shape(L))
    for level in range(L - 1, -1, -1):
        layer = net.layers[level]
        p = visible_probs(layer, states[level + 1]).reshape((n,) + net.state_shape(level))
        probs[level] = p
        states[level] = p if (level == 0 and not sample_bottom) else bernoulli_sample(p, rng)
    return PassRecord(states=states, probs=probs)


def gibbs_iteration(x0: DenseTensor, net: Drbn, rng: Rng) -> tuple[DenseTensor, DenseTensor]:
    """One up-and-down cycle; returns the new visible sample and its probability."""
    up = upward_pass(x0, net, rng)
    down = downward_pass(up.states[-1], net, rng)
    return down.states[0], down.probs[0]


def generate(net: Drbn, n_images: int, n_steps: int, rng: Rng) -> DenseTensor:
    """
    Start from Bernoulli(0.5) noise, run n_steps Gibbs iterations and return
    the visible probabilities of the final downward pass (no sampling there).
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be ≥ 1, got {n_steps}")
    if n_images < 1:
        raise ValueError(f"n_images must be ≥ 1, got {n_images}")
    dtype = net.layers[0].W.dtype
    x = bernoulli_sample(np.full((n_images,) + net.input_shape, 0.5, dtype=dtype), rng)
    probs = x
    for step in range(n_steps):
        last = step == n_steps - 1
        up = upward_pass(x, net, rng)
        down = downward_pass(up.states[-1], net, rng, sample_bottom=not last)
        x, probs = down.states[0], down.probs[0]
        if (step + 1) % 1000 == 0:
            logger.debug(f"Gibbs step {step + 1}/{n_steps}")
    return probs


def layer_energies(record: PassRecord, net: Drbn) -> list[DenseTensor]:
    """Per-layer energies E_l(x^(l), x^(l+1)) of a record's states, each computed layer-locally."""
    energies = []
    for level, layer in enumerate(net.layers):
        v = as_layer_input(record.states[level], layer)
        h = record.states[level + 1].reshape((v.shape[0],) + tuple(layer.hidden_shape))
        energies.append(layer_energy(layer, v, h))
    return energies


def free_energy_gap(net: Drbn, data: DenseTensor, reference: DenseTensor) -> float:
    """mean F₀(reference) − mean F₀(data) at the bottom layer; positive when data is favoured."""
    bottom = net.layers[0]
    f_data = layer_free_energy(bottom, as_layer_input(data, bottom))
    f_ref = layer_free_energy(bottom, as_layer_input(reference, bottom))
    return float(np.mean(f_ref) - np.mean(f_data))
