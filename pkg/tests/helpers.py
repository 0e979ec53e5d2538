"""Model builders and finite-difference helpers shared by the tests."""

import numpy as np

from drbn.core.conv_rbm import ConvRbmParams
from drbn.core.rbm import RbmParams


def random_rbm(n_visible: int, n_hidden: int, seed: int = 0, scale: float = 0.5) -> RbmParams:
    r = np.random.default_rng(seed)
    return RbmParams(
        W=scale * r.standard_normal((n_visible, n_hidden)),
        b=scale * r.standard_normal(n_visible),
        c=scale * r.standard_normal(n_hidden),
    )


def random_conv(
    input_shape=(6, 6, 1), n_filters: int = 1, filter_size: int = 3, stride: int = 1, seed: int = 0, scale: float = 0.5
) -> ConvRbmParams:
    r = np.random.default_rng(seed)
    return ConvRbmParams(
        W=scale * r.standard_normal((n_filters, filter_size, filter_size, input_shape[2])),
        b=np.asarray(scale * r.standard_normal()),
        c=scale * r.standard_normal(n_filters),
        input_shape=input_shape,
        stride=stride,
    )


def binary_batch(shape, seed: int = 0) -> np.ndarray:
    return (np.random.default_rng(seed).random(shape) < 0.5).astype(np.float64)


def numeric_grad(f, arrays: dict, eps: float = 1e-5) -> dict:
    """Central differences of scalar f(arrays) w.r.t. every entry of every array (edited in place)."""
    grads = {}
    for name, a in arrays.items():
        g = np.zeros(a.shape)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            up = f(arrays)
            flat[i] = old - eps
            down = f(arrays)
            flat[i] = old
            gflat[i] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(np.asarray(analytic) - numeric) / scale)
