"""
RBM Module.
A single dense restricted Boltzmann machine over binary units:
energy, factorized conditionals, closed-form free energy and its analytic
parameter gradients, block Gibbs sampling, and exact enumeration oracles.

Shapes: W is D×P, b is D, c is P. Every function accepts a single state or a
batch with leading axes; batch reductions are means.
"""

from dataclasses import dataclass
from typing import ClassVar

import numpy as np

from drbn.core.errors import EmptyBatchError, EnumerationLimitError, ShapeError
from drbn.core.math_core import (
    DenseTensor,
    Rng,
    all_binary_states,
    bernoulli_sample,
    default_dtype,
    sigmoid,
    softplus,
)

ENUMERATION_LIMIT = 24


# ─── Data Classes ─────────────────────────────────────────────────────────────
@dataclass(frozen=True)
class RbmParams:
    """θ = {W, b, c}: mutual weights, visible biases, hidden biases."""
    W: DenseTensor
    b: DenseTensor
    c: DenseTensor

    kind: ClassVar[str] = "dense"
    PARAM_NAMES: ClassVar[tuple[str, ...]] = ("W", "b", "c")

    def __post_init__(self):
        if self.W.ndim != 2 or self.W.shape[0] < 1 or self.W.shape[1] < 1:
            raise ShapeError(f"W must be D×P with D, P ≥ 1, got {self.W.shape}")
        if self.b.shape != (self.W.shape[0],) or self.c.shape != (self.W.shape[1],):
            raise ShapeError(
                f"bias shapes b={self.b.shape}, c={self.c.shape} do not match W={self.W.shape}"
            )

    @property
    def n_visible(self) -> int:
        return self.W.shape[0]

    @property
    def n_hidden(self) -> int:
        return self.W.shape[1]

    @property
    def visible_shape(self) -> tuple[int, ...]:
        return (self.n_visible,)

    @property
    def hidden_shape(self) -> tuple[int, ...]:
        return (self.n_hidden,)

    def as_dict(self) -> dict[str, DenseTensor]:
        return {"W": self.W, "b": self.b, "c": self.c}

    def with_arrays(self, arrays: dict[str, DenseTensor]) -> "RbmParams":
        return RbmParams(W=arrays["W"], b=arrays["b"], c=arrays["c"])

    def copy(self) -> "RbmParams":
        return RbmParams(W=self.W.copy(), b=self.b.copy(), c=self.c.copy())


@dataclass(frozen=True)
class RbmGrads:
    """∂F/∂θ averaged over a batch, shaped like RbmParams."""
    dW: DenseTensor
    db: DenseTensor
    dc: DenseTensor

    def as_dict(self) -> dict[str, DenseTensor]:
        return {"W": self.dW, "b": self.db, "c": self.dc}


def init_rbm(n_visible: int, n_hidden: int, rng: Rng, std: float = 0.01, dtype=None) -> RbmParams:
    """Gaussian N(0, std²) weights, zero biases."""
    dtype = dtype or default_dtype()
    return RbmParams(
        W=(std * rng.standard_normal((n_visible, n_hidden))).astype(dtype),
        b=np.zeros(n_visible, dtype=dtype),
        c=np.zeros(n_hidden, dtype=dtype),
    )


def _check_visible(v: DenseTensor, params: RbmParams) -> None:
    if v.shape[-1:] != (params.n_visible,):
        raise ShapeError(f"visible state shape {v.shape} does not end in {params.n_visible}")


def _check_hidden(h: DenseTensor, params: RbmParams) -> None:
    if h.shape[-1:] != (params.n_hidden,):
        raise ShapeError(f"hidden state shape {h.shape} does not end in {params.n_hidden}")


# ─── Energy & Conditionals ────────────────────────────────────────────────────
def energy(v: DenseTensor, h: DenseTensor, params: RbmParams) -> DenseTensor:
    """E(v, h) = −bᵀv − cᵀh − vᵀWh."""
    _check_visible(v, params)
    _check_hidden(h, params)
    return -(v @ params.b) - (h @ params.c) - np.sum((v @ params.W) * h, axis=-1)


def hidden_preactivation(v: DenseTensor, params: RbmParams) -> DenseTensor:
    """Wᵀv + c."""
    _check_visible(v, params)
    return v @ params.W + params.c


def prob_h_given_v(v: DenseTensor, params: RbmParams) -> DenseTensor:
    """p(h_j = 1 | v) = σ(Σ_i v_i W_ij + c_j). Accepts binary states or probabilities."""
    return sigmoid(hidden_preactivation(v, params))


def prob_v_given_h(h: DenseTensor, params: RbmParams) -> DenseTensor:
    """p(v_i = 1 | h) = σ(Σ_j W_ij h_j + b_i)."""
    _check_hidden(h, params)
    return sigmoid(h @ params.W.T + params.b)


# ─── Free Energy ──────────────────────────────────────────────────────────────
def free_energy(v: DenseTensor, params: RbmParams) -> DenseTensor:
    """F(v) = −Σ_i b_i v_i − Σ_j log(1 + exp(c_j + Σ_i v_i W_ij))."""
    return -(v @ params.b) - np.sum(softplus(hidden_preactivation(v, params)), axis=-1)


def free_energy_grad(v_batch: DenseTensor, params: RbmParams) -> RbmGrads:
    """Batch mean of ∂F/∂θ: ∂F/∂b = −v, ∂F/∂c = −σ(α), ∂F/∂W = −v σ(α)ᵀ."""
    v_batch = np.atleast_2d(v_batch)
    n = v_batch.shape[0]
    if n == 0:
        raise EmptyBatchError("free_energy_grad needs at least one visible state")
    ph = prob_h_given_v(v_batch, params)
    return RbmGrads(
        dW=-(v_batch.T @ ph) / n,
        db=-np.mean(v_batch, axis=0),
        dc=-np.mean(ph, axis=0),
    )


# ─── Sampling ─────────────────────────────────────────────────────────────────
def gibbs_step(v: DenseTensor, params: RbmParams, rng: Rng) -> tuple[DenseTensor, DenseTensor, DenseTensor]:
    """One block Gibbs sweep v → h → v'. Returns (h sample, v' sample, p(v'=1|h))."""
    h = bernoulli_sample(prob_h_given_v(v, params), rng)
    v_prob = prob_v_given_h(h, params)
    v_next = bernoulli_sample(v_prob, rng)
    return h, v_next, v_prob


# ─── Exact Oracles (small models only) ────────────────────────────────────────
def _guard_enumeration(params: RbmParams) -> None:
    if params.n_visible + params.n_hidden > ENUMERATION_LIMIT:
        raise EnumerationLimitError(
            f"D + P = {params.n_visible + params.n_hidden} exceeds the enumeration limit "
            f"of {ENUMERATION_LIMIT}"
        )


def exact_log_partition(params: RbmParams) -> float:
    """log Z = log Σ_v exp(−F(v)) by enumerating all 2**D visible states."""
    _guard_enumeration(params)
    states = all_binary_states(params.n_visible, params.W.dtype)
    return float(np.logaddexp.reduce(-free_energy(states, params)))


def exact_log_likelihood(dataset: DenseTensor, params: RbmParams) -> float:
    """Mean log p(v) = −F(v) − log Z over the dataset."""
    dataset = np.atleast_2d(dataset)
    if dataset.shape[0] == 0:
        raise EmptyBatchError("exact_log_likelihood needs a nonempty dataset")
    log_z = exact_log_partition(params)
    return float(np.mean(-free_energy(dataset, params)) - log_z)


def exact_model_grad(params: RbmParams) -> RbmGrads:
    """E_{p(v)}[∂F/∂θ], the exact model-dependent gradient term."""
    _guard_enumeration(params)
    states = all_binary_states(params.n_visible, params.W.dtype)
    neg_f = -free_energy(states, params)
    weights = np.exp(neg_f - np.logaddexp.reduce(neg_f))
    ph = prob_h_given_v(states, params)
    return RbmGrads(
        dW=-(states * weights[:, np.newaxis]).T @ ph,
        db=-(weights @ states),
        dc=-(weights @ ph),
    )
