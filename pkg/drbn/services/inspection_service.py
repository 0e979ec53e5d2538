"""
Inspection Service.
Summarizes a ModelFile: architecture, per-layer shapes, weight counts and the
mean bottom-layer free energy of a probe batch.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from drbn.core.errors import DrbnError
from drbn.core.math_core import bernoulli_sample, make_rng
from drbn.core.network import as_layer_input, layer_free_energy, network_weight_count
from drbn.storage.model_store import describe_layout, load
from drbn.utils.logger import logger


@dataclass
class LayerSummary:
    index: int
    kind: str
    visible_shape: tuple[int, ...]
    hidden_shape: tuple[int, ...]
    weights: int
    description: str


@dataclass
class InspectionResult:
    success: bool
    message: str = ""
    input_shape: tuple[int, ...] = ()
    layers: list[LayerSummary] = field(default_factory=list)
    total_weights: int = 0
    probe_free_energy: Optional[float] = None
    probe_source: str = ""
    layout: str = ""

    def to_text(self) -> str:
        if not self.success:
            return f"error: {self.message}"
        lines = [f"format: {self.layout}", f"input: {'×'.join(map(str, self.input_shape))}"]
        for layer in self.layers:
            lines.append(
                f"layer {layer.index}: {layer.description}  "
                f"visible={'×'.join(map(str, layer.visible_shape))} "
                f"hidden={'×'.join(map(str, layer.hidden_shape))} weights={layer.weights:,}"
            )
        lines.append(f"total weights: {self.total_weights:,}")
        if self.probe_free_energy is not None:
            lines.append(f"probe free energy ({self.probe_source}): {self.probe_free_energy:.6f}")
        return "\n".join(lines)


def inspect_model(model_path: Path, probe: Optional[np.ndarray] = None, seed: int = 0, probe_size: int = 100) -> InspectionResult:
    """Without a probe batch, Bernoulli(0.5) noise from `seed` is used."""
    try:
        net = load(model_path)
    except (DrbnError, OSError) as exc:
        logger.error(f"Cannot inspect {model_path}: {exc}")
        return InspectionResult(success=False, message=str(exc))
    spec = net.spec
    layers = [
        LayerSummary(
            index=i,
            kind=s.kind,
            visible_shape=tuple(layer.visible_shape),
            hidden_shape=tuple(s.hidden_shape),
            weights=s.weight_count,
            description=s.describe(),
        )
        for i, (s, layer) in enumerate(zip(spec.layers, net.layers))
    ]
    if probe is None:
        dtype = net.layers[0].W.dtype
        probe = bernoulli_sample(np.full((probe_size,) + net.input_shape, 0.5, dtype=dtype), make_rng(seed))
        source = f"{probe_size} noise images"
    else:
        source = f"{probe.shape[0]} data images"
    bottom = net.layers[0]
    batch = probe.reshape((probe.shape[0],) + net.input_shape)
    free_energy = float(np.mean(layer_free_energy(bottom, as_layer_input(batch, bottom))))
    return InspectionResult(
        success=True,
        message=f"{net.n_layers}-layer model at {model_path}",
        input_shape=net.input_shape,
        layers=layers,
        total_weights=network_weight_count(net),
        probe_free_energy=free_energy,
        probe_source=source,
        layout=describe_layout(net),
    )
