"""
Adam optimizer with bias correction.
Parameters and gradients travel as name → array dicts so one implementation
serves dense layers, convolutional layers and the softmax head.
"""

from dataclasses import dataclass, field

import numpy as np

from drbn.core.errors import ShapeError
from drbn.core.math_core import DenseTensor

ParamDict = dict[str, DenseTensor]


@dataclass
class AdamState:
    """Moment accumulators shaped like the parameter set, plus the step counter."""
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: ParamDict = field(default_factory=dict)
    v: ParamDict = field(default_factory=dict)

    def copy(self) -> "AdamState":
        return AdamState(
            lr=self.lr, beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon, t=self.t,
            m={k: a.copy() for k, a in self.m.items()},
            v={k: a.copy() for k, a in self.v.items()},
        )


def init_adam(
    params: ParamDict,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    epsilon: float = 1e-8,
) -> AdamState:
    """Fresh state with zero moments congruent with `params`."""
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon, t=0,
        m={name: np.zeros_like(p) for name, p in params.items()},
        v={name: np.zeros_like(p) for name, p in params.items()},
    )


def adam_step(params: ParamDict, grads: ParamDict, state: AdamState) -> tuple[ParamDict, AdamState]:
    """
    One bias-corrected Adam descent step. Inputs are left untouched; new
    parameter and moment arrays are returned.
    """
    if params.keys() != grads.keys():
        raise ShapeError(f"gradient names {sorted(grads)} do not match parameters {sorted(params)}")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ShapeError(f"gradient '{name}' has shape {grads[name].shape}, parameter has {p.shape}")
        if name in state.m and state.m[name].shape != p.shape:
            raise ShapeError(f"moment '{name}' has shape {state.m[name].shape}, parameter has {p.shape}")

    t = state.t + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t

    new_params: ParamDict = {}
    new_m: ParamDict = {}
    new_v: ParamDict = {}
    for name, p in params.items():
        g = grads[name]
        m_prev = state.m.get(name, np.zeros_like(p))
        v_prev = state.v.get(name, np.zeros_like(p))
        m = state.beta1 * m_prev + (1.0 - state.beta1) * g
        v = state.beta2 * v_prev + (1.0 - state.beta2) * (g * g)
        step = state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
        new_params[name] = (p - step).astype(p.dtype, copy=False)
        new_m[name] = m
        new_v[name] = v

    new_state = AdamState(
        lr=state.lr, beta1=state.beta1, beta2=state.beta2, epsilon=state.epsilon,
        t=t, m=new_m, v=new_v,
    )
    return new_params, new_state
