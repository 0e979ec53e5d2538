"""
Math Core Module.
Deterministic numerical primitives shared by every layer kind:
sigmoid / softplus, seeded Bernoulli sampling, strided valid convolution and
its exact transpose, and binary state enumeration for small-model oracles.

Tensors are plain row-major numpy arrays (float64 unless DRBN_DTYPE says
otherwise). Image-like tensors use channels-last layout (..., H, W, C); any
leading axes are batch axes.

Convolution orientation is cross-correlation (no filter flip):
    out[i, j, k] = Σ_{r,s,c} W[k, r, s, c] · x[stride·i + r, stride·j + s, c]
which is the 0-based form of the energy's W_{r,s} v_{i+r−1, j+s−1} indexing.

Random streams are numpy Generators over PCG64. Independent streams are
derived by SeedSequence spawning and are owned by exactly one chain.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from numpy.typing import NDArray

from drbn.config.settings import compute_settings
from drbn.core.errors import GeometryError, ProbabilityRangeError, ShapeError

DenseTensor = NDArray[np.floating]
Rng = np.random.Generator


# ─── Precision & RNG ─────────────────────────────────────────────────────────
def default_dtype() -> np.dtype:
    """Configured floating dtype (float64 unless DRBN_DTYPE=float32)."""
    dtype = np.dtype(compute_settings.DTYPE)
    if dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
        raise ValueError(f"DRBN_DTYPE must be float64 or float32, got {dtype}")
    return dtype


def make_rng(seed: int) -> Rng:
    """PCG64 generator seeded through a SeedSequence; identical seed ⇒ identical stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def split_rng(seed: int, n_streams: int) -> list[Rng]:
    """Derive `n_streams` statistically independent generators from one seed."""
    children = np.random.SeedSequence(seed).spawn(n_streams)
    return [np.random.Generator(np.random.PCG64(child)) for child in children]


def rng_from_state(state: dict) -> Rng:
    """Rebuild a generator from `rng.bit_generator.state` (used by checkpoints)."""
    bit_gen = np.random.PCG64()
    bit_gen.state = state
    return np.random.Generator(bit_gen)


# ─── Elementwise ─────────────────────────────────────────────────────────────
def sigmoid(x: DenseTensor) -> DenseTensor:
    """
    Logistic function 1 / (1 + exp(−x)), evaluated without overflow.
    Results are clipped into the open interval (0, 1) of the input dtype, so
    σ(x) + σ(−x) = 1 holds to machine precision and samples stay well-defined.
    """
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(default_dtype())
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype, copy=False)
    finfo = np.finfo(x.dtype)
    return np.clip(out, finfo.tiny, np.nextafter(x.dtype.type(1), x.dtype.type(0)))


def softplus(x: DenseTensor) -> DenseTensor:
    """log(1 + exp(x)) without overflow for large |x|."""
    return np.logaddexp(0.0, x)


def bernoulli_sample(p: DenseTensor, rng: Rng) -> DenseTensor:
    """Independent {0,1} draws with P(1) = p elementwise; consumes one uniform per element."""
    p = np.asarray(p)
    if not np.all((p >= 0.0) & (p <= 1.0)):
        bad = p[~((p >= 0.0) & (p <= 1.0))]
        raise ProbabilityRangeError(
            f"bernoulli_sample got {bad.size} value(s) outside [0, 1], e.g. {bad.flat[0]!r}"
        )
    dtype = p.dtype if np.issubdtype(p.dtype, np.floating) else default_dtype()
    return (rng.random(p.shape) < p).astype(dtype)


# ─── Convolution ─────────────────────────────────────────────────────────────
def conv_output_hw(height: int, width: int, filter_size: int, stride: int) -> tuple[int, int]:
    """Output extent of a strict valid convolution; raises on inexact geometry."""
    if stride < 1:
        raise GeometryError(f"stride must be positive, got {stride}")
    if filter_size < 1:
        raise GeometryError(f"filter size must be positive, got {filter_size}")
    if height < filter_size or width < filter_size:
        raise GeometryError(
            f"input {height}x{width} is smaller than the {filter_size}x{filter_size} filter"
        )
    if (height - filter_size) % stride or (width - filter_size) % stride:
        raise GeometryError(
            f"input {height}x{width} with filter {filter_size} and stride {stride} "
            f"does not tile exactly: (N - Nw) must be divisible by the stride"
        )
    return (height - filter_size) // stride + 1, (width - filter_size) // stride + 1


def _check_filters(filters: DenseTensor) -> tuple[int, int, int]:
    if filters.ndim != 4 or filters.shape[1] != filters.shape[2]:
        raise ShapeError(f"filters must be K×Nw×Nw×Cin, got shape {filters.shape}")
    n_filters, filter_size, _, in_channels = filters.shape
    return n_filters, filter_size, in_channels


def _strided_windows(x: DenseTensor, filter_size: int, stride: int) -> DenseTensor:
    """View of shape (..., H', W', Cin, Nw, Nw) over the receptive fields of x."""
    windows = sliding_window_view(x, (filter_size, filter_size), axis=(-3, -2))
    return windows[..., ::stride, ::stride, :, :, :]


def conv_valid(x: DenseTensor, filters: DenseTensor, stride: int) -> DenseTensor:
    """Strided valid cross-correlation: (..., H, W, Cin) ⊛ (K, Nw, Nw, Cin) → (..., H', W', K)."""
    _, filter_size, in_channels = _check_filters(filters)
    if x.ndim < 3 or x.shape[-1] != in_channels:
        raise ShapeError(f"input shape {x.shape} does not end in {in_channels} channels")
    conv_output_hw(x.shape[-3], x.shape[-2], filter_size, stride)
    windows = _strided_windows(x, filter_size, stride)
    # windows axes (..., i, j, c, r, s) against filters axes (k, r, s, c)
    return np.tensordot(windows, filters, axes=([-3, -2, -1], [3, 1, 2]))


def conv_transpose(
    hidden: DenseTensor,
    filters: DenseTensor,
    stride: int,
    output_hw: tuple[int, int] | None = None,
) -> DenseTensor:
    """
    Exact adjoint of conv_valid: (..., H', W', K) → (..., H, W, Cin) with
    H = stride·(H'−1) + Nw. Each hidden unit stamps its filter, scaled by its
    value, onto the visible patch it was computed from.
    """
    n_filters, filter_size, in_channels = _check_filters(filters)
    if hidden.ndim < 3 or hidden.shape[-1] != n_filters:
        raise ShapeError(f"hidden shape {hidden.shape} does not end in {n_filters} channels")
    out_h_count, out_w_count = hidden.shape[-3], hidden.shape[-2]
    height = stride * (out_h_count - 1) + filter_size
    width = stride * (out_w_count - 1) + filter_size
    if output_hw is not None and tuple(output_hw) != (height, width):
        raise ShapeError(
            f"hidden grid {out_h_count}x{out_w_count} maps to {height}x{width}, "
            f"not the requested {output_hw[0]}x{output_hw[1]}"
        )

    patches = np.tensordot(hidden, filters, axes=([-1], [0]))   # (..., H', W', Nw, Nw, Cin)
    dtype = np.result_type(hidden.dtype, filters.dtype)
    out = np.zeros(hidden.shape[:-3] + (height, width, in_channels), dtype=dtype)
    row_span = stride * (out_h_count - 1) + 1
    col_span = stride * (out_w_count - 1) + 1
    for r in range(filter_size):
        for s in range(filter_size):
            out[..., r:r + row_span:stride, s:s + col_span:stride, :] += patches[..., :, :, r, s, :]
    return out


def conv_filter_correlation(x: DenseTensor, hidden: DenseTensor, filter_size: int, stride: int) -> DenseTensor:
    """
    Σ over batch and positions of hidden[n,i,j,k] · x[n, stride·i + r, stride·j + s, c],
    shaped like the filters (K, Nw, Nw, Cin). This is ∂/∂W of Σ hidden ⊙ conv_valid(x, W).
    """
    if x.ndim == 3:
        x = x[np.newaxis]
    if hidden.ndim == 3:
        hidden = hidden[np.newaxis]
    if x.shape[0] != hidden.shape[0]:
        raise ShapeError(f"batch sizes differ: input {x.shape[0]} vs hidden {hidden.shape[0]}")
    windows = _strided_windows(x, filter_size, stride)        # (n, H', W', Cin, Nw, Nw)
    if windows.shape[1:3] != hidden.shape[1:3]:
        raise ShapeError(f"hidden grid {hidden.shape[1:3]} does not match windows {windows.shape[1:3]}")
    corr = np.tensordot(hidden, windows, axes=([0, 1, 2], [0, 1, 2]))   # (K, Cin, Nw, Nw)
    return corr.transpose(0, 2, 3, 1)


# ─── Enumeration ─────────────────────────────────────────────────────────────
def all_binary_states(n_units: int, dtype: np.dtype | None = None) -> DenseTensor:
    """All 2**n binary vectors, row b holding the big-endian bits of b."""
    codes = np.arange(2 ** n_units, dtype=np.int64)[:, np.newaxis]
    bits = (codes >> np.arange(n_units - 1, -1, -1, dtype=np.int64)) & 1
    return bits.astype(dtype or default_dtype())
