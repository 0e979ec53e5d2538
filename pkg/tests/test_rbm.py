import itertools

import numpy as np
import pytest

from drbn.core.errors import EmptyBatchError, EnumerationLimitError, ShapeError
from drbn.core.math_core import all_binary_states, make_rng
from drbn.core.rbm import (
    RbmParams,
    energy,
    exact_log_likelihood,
    exact_log_partition,
    exact_model_grad,
    free_energy,
    free_energy_grad,
    gibbs_step,
    init_rbm,
    prob_h_given_v,
    prob_v_given_h,
)
from tests.helpers import binary_batch, numeric_grad, random_rbm, relative_error


def _constant(d, p, value):
    return RbmParams(W=np.full((d, p), value), b=np.full(d, value), c=np.full(p, value))


def _zeros(d, p):
    return _constant(d, p, 0.0)


class TestParams:
    def test_rejects_bad_bias(self):
        with pytest.raises(ShapeError):
            RbmParams(W=np.zeros((3, 2)), b=np.zeros(2), c=np.zeros(2))

    def test_init(self, rng):
        params = init_rbm(784, 500, rng)
        assert params.W.shape == (784, 500)
        assert np.all(params.b == 0) and np.all(params.c == 0)
        assert abs(params.W.std() - 0.01) < 1e-3


class TestEnergy:
    def test_zero_state(self):
        assert energy(np.zeros(4), np.zeros(3), random_rbm(4, 3)) == 0.0

    def test_all_ones_constant_params(self):
        d, p, a = 4, 3, 0.7
        assert energy(np.ones(d), np.ones(p), _constant(d, p, a)) == pytest.approx(-(d + p + d * p) * a)

    def test_matches_scalar_loop(self):
        params = random_rbm(2, 2, seed=3)
        v, h = np.array([1.0, 0.0]), np.array([1.0, 1.0])
        expected = 0.0
        for i in range(2):
            expected -= params.b[i] * v[i]
            for j in range(2):
                expected -= v[i] * params.W[i, j] * h[j]
        for j in range(2):
            expected -= params.c[j] * h[j]
        assert energy(v, h, params) == pytest.approx(expected, abs=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            energy(np.zeros(5), np.zeros(3), random_rbm(4, 3))


class TestConditionals:
    def test_zero_params_give_half(self):
        np.testing.assert_array_equal(prob_h_given_v(np.ones(4), _zeros(4, 3)), 0.5)
        np.testing.assert_array_equal(prob_v_given_h(np.ones(3), _zeros(4, 3)), 0.5)

    def test_hidden_bias_log_three(self):
        params = RbmParams(W=np.zeros((2, 3)), b=np.zeros(2), c=np.array([0.0, np.log(3.0), 0.0]))
        assert prob_h_given_v(np.ones(2), params)[1] == pytest.approx(0.75)

    def test_h_zero_gives_sigmoid_b(self):
        params = random_rbm(4, 3)
        np.testing.assert_allclose(prob_v_given_h(np.zeros(3), params), 1 / (1 + np.exp(-params.b)), atol=1e-15)

    def test_prob_h_matches_enumeration(self):
        params = random_rbm(3, 4, seed=5)
        v = np.array([1.0, 0.0, 1.0])
        hs = all_binary_states(4)
        weights = np.exp(-energy(np.broadcast_to(v, (16, 3)), hs, params))
        expected = (weights @ hs) / weights.sum()
        np.testing.assert_allclose(prob_h_given_v(v, params), expected, atol=1e-12)

    def test_prob_v_matches_enumeration(self):
        params = random_rbm(4, 3, seed=6)
        h = np.array([0.0, 1.0, 1.0])
        vs = all_binary_states(4)
        weights = np.exp(-energy(vs, np.broadcast_to(h, (16, 3)), params))
        expected = (weights @ vs) / weights.sum()
        np.testing.assert_allclose(prob_v_given_h(h, params), expected, atol=1e-12)


class TestFreeEnergy:
    def test_zero_params(self):
        assert free_energy(np.ones(5), _zeros(5, 4)) == pytest.approx(-4 * np.log(2.0))

    def test_zero_weights(self):
        params = random_rbm(3, 4, seed=1)
        params = RbmParams(W=np.zeros((3, 4)), b=params.b, c=params.c)
        v = np.array([1.0, 1.0, 0.0])
        expected = -params.b @ v - np.sum(np.log1p(np.exp(params.c)))
        assert free_energy(v, params) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_hidden_enumeration(self, seed):
        d, p = 3, 3
        params = random_rbm(d, p, seed=seed, scale=1.0)
        hs = all_binary_states(p)
        for v in all_binary_states(d):
            brute = -np.logaddexp.reduce(-energy(np.broadcast_to(v, (2 ** p, d)), hs, params))
            assert free_energy(v, params) == pytest.approx(brute, rel=1e-10, abs=1e-12)

    @pytest.mark.parametrize("p", [6, 12])
    def test_larger_hidden_layers(self, p):
        params = random_rbm(4, p, seed=p)
        hs = all_binary_states(p)
        v = np.array([1.0, 0.0, 1.0, 1.0])
        brute = -np.logaddexp.reduce(-energy(np.broadcast_to(v, (2 ** p, 4)), hs, params))
        assert free_energy(v, params) == pytest.approx(brute, rel=1e-10)


class TestFreeEnergyGrad:
    @pytest.mark.parametrize("seed", range(20))
    def test_finite_differences(self, seed):
        params = random_rbm(4, 3, seed=seed)
        batch = binary_batch((5, 4), seed=seed)
        grads = free_energy_grad(batch, params).as_dict()
        arrays = {"W": params.W.copy(), "b": params.b.copy(), "c": params.c.copy()}
        numeric = numeric_grad(lambda a: float(np.mean(free_energy(batch, RbmParams(**a)))), arrays)
        for name in arrays:
            assert relative_error(grads[name], numeric[name]) < 1e-6

    def test_zero_visible(self):
        g = free_energy_grad(np.zeros((3, 4)), random_rbm(4, 3))
        assert np.all(g.db == 0) and np.all(g.dW == 0)

    def test_zero_params_ones(self):
        g = free_energy_grad(np.ones((2, 4)), _zeros(4, 3))
        np.testing.assert_array_equal(g.dc, -0.5)

    def test_empty_batch(self):
        with pytest.raises(EmptyBatchError):
            free_energy_grad(np.zeros((0, 4)), random_rbm(4, 3))


class TestGibbs:
    def test_zero_params_probabilities(self):
        _, _, v_prob = gibbs_step(np.ones((3, 4)), _zeros(4, 2), make_rng(0))
        np.testing.assert_array_equal(v_prob, 0.5)

    def test_deterministic(self):
        params = random_rbm(5, 3)
        v = binary_batch((4, 5))
        a = gibbs_step(v, params, make_rng(9))
        b = gibbs_step(v, params, make_rng(9))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)

    def test_strong_visible_bias(self):
        params = RbmParams(W=np.zeros((6, 2)), b=np.full(6, 20.0), c=np.zeros(2))
        _, v_next, _ = gibbs_step(np.zeros((1000, 6)), params, make_rng(1))
        assert np.all(v_next == 1)

    def test_zero_weights_sample_the_bias_marginals(self):
        params = RbmParams(W=np.zeros((3, 2)), b=np.array([-1.0, 0.5, 2.0]), c=np.array([1.0, -2.0]))
        h, v_next, _ = gibbs_step(binary_batch((20_000, 3)), params, make_rng(4))
        np.testing.assert_allclose(h.mean(axis=0), 1.0 / (1.0 + np.exp(-params.c)), atol=0.015)
        np.testing.assert_allclose(v_next.mean(axis=0), 1.0 / (1.0 + np.exp(-params.b)), atol=0.015)

    def test_long_chain_visits_both_modes(self):
        a = 2.0
        params = RbmParams(
            W=np.array([[a], [a], [-a], [-a]]), b=np.array([-a, -a, a, a]) / 2, c=np.zeros(1),
        )
        modes = {(1.0, 1.0, 0.0, 0.0): 0, (0.0, 0.0, 1.0, 1.0): 0}
        v, rng = np.zeros((1, 4)), make_rng(3)
        for _ in range(3000):
            _, v, _ = gibbs_step(v, params, rng)
            key = tuple(v[0])
            if key in modes:
                modes[key] += 1
        assert min(modes.values()) > 150, modes


class TestExactOracles:
    def test_tiny_uniform_model(self):
        params = _zeros(1, 1)
        assert exact_log_partition(params) == pytest.approx(np.log(4.0))
        for v in ([0.0], [1.0]):
            assert exact_log_likelihood(np.array([v]), params) == pytest.approx(-np.log(2.0))

    def test_normalization(self):
        params = random_rbm(3, 3, seed=2)
        log_z = exact_log_partition(params)
        probs = np.exp(-free_energy(all_binary_states(3), params) - log_z)
        assert probs.sum() == pytest.approx(1.0, abs=1e-10)

    def test_partition_matches_joint_enumeration(self):
        params = random_rbm(3, 2, seed=4)
        joint = [
            -energy(np.array(v, float), np.array(h, float), params)
            for v in itertools.product([0, 1], repeat=3)
            for h in itertools.product([0, 1], repeat=2)
        ]
        assert exact_log_partition(params) == pytest.approx(np.logaddexp.reduce(joint), rel=1e-12)

    def test_model_grad_zero_params(self):
        g = exact_model_grad(_zeros(3, 2))
        np.testing.assert_allclose(g.db, -0.5)
        np.testing.assert_allclose(g.dc, -0.5)
        np.testing.assert_allclose(g.dW, -0.25)

    def test_limit(self):
        with pytest.raises(EnumerationLimitError):
            exact_log_partition(_zeros(20, 10))
