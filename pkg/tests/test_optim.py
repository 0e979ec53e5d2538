import numpy as np
import pytest

from drbn.core.errors import ShapeError
from drbn.core.optim import adam_step, init_adam


def _params():
    return {"W": np.arange(6, dtype=float).reshape(2, 3), "b": np.array([0.5, -0.5])}


def test_zero_gradient_leaves_params_unchanged():
    params = _params()
    state = init_adam(params)
    new, _ = adam_step(params, {k: np.zeros_like(v) for k, v in params.items()}, state)
    for name in params:
        np.testing.assert_array_equal(new[name], params[name])


def test_first_step_moves_by_lr_times_sign():
    params = _params()
    grads = {"W": np.full((2, 3), 3.0), "b": np.array([-2.0, 7.0])}
    state = init_adam(params, lr=1e-3)
    new, state = adam_step(params, grads, state)
    for name in params:
        np.testing.assert_allclose(params[name] - new[name], 1e-3 * np.sign(grads[name]), rtol=1e-6)
    assert state.t == 1


def test_inputs_untouched_and_deterministic():
    params = _params()
    grads = {"W": np.ones((2, 3)), "b": np.ones(2)}
    state = init_adam(params)
    snapshot = {k: v.copy() for k, v in params.items()}
    a, sa = adam_step(params, grads, state)
    b, sb = adam_step(params, grads, state)
    for name in params:
        np.testing.assert_array_equal(params[name], snapshot[name])
        np.testing.assert_array_equal(a[name], b[name])
        np.testing.assert_array_equal(sa.m[name], sb.m[name])
    assert state.t == 0


def test_step_counter_increases_and_moments_congruent():
    params = _params()
    state = init_adam(params)
    for _ in range(3):
        params, state = adam_step(params, {k: np.ones_like(v) for k, v in params.items()}, state)
    assert state.t == 3
    for name in params:
        assert state.m[name].shape == params[name].shape
        assert state.v[name].shape == params[name].shape


def test_zero_learning_rate_is_identity():
    params = _params()
    new, _ = adam_step(params, {k: np.ones_like(v) for k, v in params.items()}, init_adam(params, lr=0.0))
    for name in params:
        np.testing.assert_array_equal(new[name], params[name])


@pytest.mark.parametrize("grads", [
    {"W": np.ones((3, 2)), "b": np.ones(2)},
    {"W": np.ones((2, 3))},
])
def test_shape_mismatch(grads):
    params = _params()
    with pytest.raises(ShapeError):
        adam_step(params, grads, init_adam(params))
