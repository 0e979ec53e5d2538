"""
Convolutional RBM Module.
Shared-filter RBM layer: energy, conditionals, free energy and analytic
gradients, interchangeable with the dense RBM inside a network stack.

Layout: visible (..., H, W, Cin), hidden (..., H', W', K), filters
(K, Nw, Nw, Cin). One scalar visible bias b is shared by every pixel and
channel; each hidden channel k has its own bias c_k. Hidden unit (i, j)
reads the visible patch whose top-left corner is (stride·i, stride·j).
"""

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from drbn.core.errors import EmptyBatchError, ShapeError
from drbn.core.math_core import (
    DenseTensor,
    Rng,
    bernoulli_sample,
    conv_filter_correlation,
    conv_output_hw,
    conv_transpose,
    conv_valid,
    default_dtype,
    sigmoid,
    softplus,
)
from drbn.core.rbm import RbmParams

_SPATIAL = (-3, -2, -1)


@dataclass(frozen=True)
class ConvRbmParams:
    """Filters W, hidden channel biases c, scalar visible bias b (0-d array)."""
    W: DenseTensor
    b: DenseTensor
    c: DenseTensor
    input_shape: tuple[int, int, int]
    stride: int = 1

    kind: ClassVar[str] = "conv"
    PARAM_NAMES: ClassVar[tuple[str, ...]] = ("W", "b", "c")

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(x) for x in self.input_shape))
        object.__setattr__(self, "stride", int(self.stride))
        if self.W.ndim != 4 or self.W.shape[1] != self.W.shape[2] or min(self.W.shape) < 1:
            raise ShapeError(f"filters must be K×Nw×Nw×Cin with positive extents, got {self.W.shape}")
        if self.b.shape != ():
            raise ShapeError(f"conv visible bias must be a scalar, got shape {self.b.shape}")
        if self.c.shape != (self.W.shape[0],):
            raise ShapeError(f"hidden bias shape {self.c.shape} does not match {self.W.shape[0]} filters")
        if len(self.input_shape) != 3 or self.input_shape[2] != self.W.shape[3]:
            raise ShapeError(
                f"input shape {self.input_shape} must be H×W×{self.W.shape[3]} for these filters"
            )
        conv_output_hw(self.input_shape[0], self.input_shape[1], self.filter_size, self.stride)

    @property
    def n_filters(self) -> int:
        return self.W.shape[0]

    @property
    def filter_size(self) -> int:
        return self.W.shape[1]

    @property
    def visible_shape(self) -> tuple[int, int, int]:
        return tuple(self.input_shape)

    @property
    def hidden_shape(self) -> tuple[int, int, int]:
        out_h, out_w = conv_output_hw(self.input_shape[0], self.input_shape[1], self.filter_size, self.stride)
        return out_h, out_w, self.n_filters

    def as_dict(self) -> dict[str, DenseTensor]:
        return {"W": self.W, "b": self.b, "c": self.c}

    def with_arrays(self, arrays: dict[str, DenseTensor]) -> "ConvRbmParams":
        return ConvRbmParams(
            W=arrays["W"], b=np.asarray(arrays["b"]), c=arrays["c"],
            stride=self.stride, input_shape=self.input_shape,
        )

    def copy(self) -> "ConvRbmParams":
        return self.with_arrays({k: a.copy() for k, a in self.as_dict().items()})


@dataclass(frozen=True)
class ConvRbmGrads:
    dW: DenseTensor
    db: DenseTensor
    dc: DenseTensor

    def as_dict(self) -> dict[str, DenseTensor]:
        return {"W": self.dW, "b": self.db, "c": self.dc}


def init_conv_rbm(
    input_shape: tuple[int, int, int],
    n_filters: int,
    filter_size: int,
    stride: int,
    rng: Rng,
    std: float = 0.01,
    dtype=None,
) -> ConvRbmParams:
    dtype = dtype or default_dtype()
    in_channels = input_shape[2]
    return ConvRbmParams(
        W=(std * rng.standard_normal((n_filters, filter_size, filter_size, in_channels))).astype(dtype),
        b=np.zeros((), dtype=dtype),
        c=np.zeros(n_filters, dtype=dtype),
        stride=stride,
        input_shape=tuple(input_shape),
    )


def _check_visible(v: DenseTensor, params: ConvRbmParams) -> None:
    if v.shape[-3:] != params.visible_shape:
        raise ShapeError(f"visible shape {v.shape} does not end in {params.visible_shape}")


def _check_hidden(h: DenseTensor, params: ConvRbmParams) -> None:
    if h.shape[-3:] != params.hidden_shape:
        raise ShapeError(f"hidden shape {h.shape} does not end in {params.hidden_shape}")


def conv_preactivation(v: DenseTensor, params: ConvRbmParams) -> DenseTensor:
    """α = f(v, W) + c_k, the hidden input field."""
    _check_visible(v, params)
    return conv_valid(v, params.W, params.stride) + params.c


# ─── Energy & Conditionals ────────────────────────────────────────────────────
def conv_energy(v: DenseTensor, h: DenseTensor, params: ConvRbmParams) -> DenseTensor:
    """E(v,h) = −Σ_k Σ_ij h^k_ij (W^k ⊛ v)_ij − Σ_k c_k Σ_ij h^k_ij − b Σ v."""
    _check_visible(v, params)
    _check_hidden(h, params)
    interaction = np.sum(h * conv_valid(v, params.W, params.stride), axis=_SPATIAL)
    return -interaction - np.sum(h * params.c, axis=_SPATIAL) - params.b * np.sum(v, axis=_SPATIAL)


def conv_prob_h_given_v(v: DenseTensor, params: ConvRbmParams) -> DenseTensor:
    return sigmoid(conv_preactivation(v, params))


def conv_prob_v_given_h(h: DenseTensor, params: ConvRbmParams) -> DenseTensor:
    _check_hidden(h, params)
    field_ = conv_transpose(h, params.W, params.stride, params.input_shape[:2])
    return sigmoid(field_ + params.b)


# ─── Free Energy ──────────────────────────────────────────────────────────────
def conv_free_energy(v: DenseTensor, params: ConvRbmParams) -> DenseTensor:
    """F(v) = −b Σ v − Σ_{k,i,j} log(1 + exp(α^k_ij))."""
    alpha = conv_preactivation(v, params)
    return -params.b * np.sum(v, axis=_SPATIAL) - np.sum(softplus(alpha), axis=_SPATIAL)


def conv_free_energy_grad(v_batch: DenseTensor, params: ConvRbmParams) -> ConvRbmGrads:
    """Batch mean of ∂F/∂θ; the filter gradient correlates v with σ(α)."""
    if v_batch.ndim == 3:
        v_batch = v_batch[np.newaxis]
    n = v_batch.shape[0]
    if n == 0:
        raise EmptyBatchError("conv_free_energy_grad needs at least one visible state")
    s = sigmoid(conv_preactivation(v_batch, params))
    dW = -conv_filter_correlation(v_batch, s, params.filter_size, params.stride) / n
    db = np.asarray(-np.sum(v_batch) / n, dtype=params.b.dtype)
    dc = -np.sum(s, axis=(0, 1, 2)) / n
    return ConvRbmGrads(dW=dW, db=db, dc=dc)


def conv_gibbs_step(v: DenseTensor, params: ConvRbmParams, rng: Rng) -> tuple[DenseTensor, DenseTensor, DenseTensor]:
    h = bernoulli_sample(conv_prob_h_given_v(v, params), rng)
    v_prob = conv_prob_v_given_h(h, params)
    return h, bernoulli_sample(v_prob, rng), v_prob


# ─── Unrolling ────────────────────────────────────────────────────────────────
def unroll_to_dense(params: ConvRbmParams) -> RbmParams:
    """
    Equivalent dense RBM over row-major (H, W, C) visibles and (H', W', K)
    hiddens: every dense weight column is one hidden unit's filter placed at
    its patch, b is broadcast to all pixels and c_k to every position.
    """
    n_visible = int(np.prod(params.visible_shape))
    basis = np.eye(n_visible, dtype=params.W.dtype).reshape((n_visible,) + params.visible_shape)
    W_dense = conv_valid(basis, params.W, params.stride).reshape(n_visible, -1)
    out_h, out_w, _ = params.hidden_shape
    return RbmParams(
        W=W_dense,
        b=np.full(n_visible, params.b, dtype=params.W.dtype),
        c=np.tile(params.c, out_h * out_w),
    )
