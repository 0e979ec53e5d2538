import copy

import numpy as np
import pytest

from drbn.core.errors import ConfigError, EmptyBatchError, ShapeError
from drbn.core.math_core import make_rng
from drbn.core.network import Drbn, free_energy_gap, init_network, parse_architecture
from drbn.core.optim import adam_step
from drbn.core.rbm import RbmParams, exact_log_likelihood, exact_model_grad
from drbn.core.trainer import (
    PcdState,
    TrainConfig,
    advance_particles,
    collect_data_terms,
    epoch_permutation,
    fit,
    init_pcd,
    init_training_state,
    layer_loss,
    layer_loss_grad,
    noise_reference,
    train_step,
)
from tests.helpers import binary_batch, random_rbm


def _config(**overrides) -> TrainConfig:
    values = dict(k=1, n_particles=8, batch_size=4, epochs=1, learning_rate=0.01, seed=3, eval_every=0)
    values.update(overrides)
    return TrainConfig(**values)


def _small_net(seed: int = 0) -> Drbn:
    return init_network(parse_architecture("conv:4x3,dense:7", (6, 6, 1)), make_rng(seed), std=0.1)


def _two_modes(n: int = 40) -> np.ndarray:
    pattern = np.tile([1.0, 0.0], 8)
    return np.stack([pattern if i % 2 else 1.0 - pattern for i in range(n)])


class TestTerms:
    def test_data_terms_are_layer_inputs(self):
        net = _small_net()
        terms = collect_data_terms(binary_batch((5, 6, 6, 1)), net, make_rng(1))
        assert [t.shape for t in terms] == [(5, 6, 6, 1), (5, 64)]

    def test_empty_minibatch(self):
        with pytest.raises(EmptyBatchError):
            collect_data_terms(np.zeros((0, 6, 6, 1)), _small_net(), make_rng(1))

    def test_particles_start_as_noise(self):
        pcd = init_pcd(_small_net(), 2000, make_rng(2))
        assert pcd.particles.shape == (2000, 6, 6, 1)
        assert set(np.unique(pcd.particles)) <= {0.0, 1.0}
        assert 0.45 <= pcd.particles.mean() <= 0.55

    def test_particle_terms_and_in_place_update(self):
        net = _small_net()
        pcd = init_pcd(net, 6, make_rng(2))
        before = pcd.particles.copy()
        terms = advance_particles(pcd, net, 3)
        assert [t.shape for t in terms] == [(6, 6, 6, 1), (6, 64)]
        np.testing.assert_array_equal(terms[0], pcd.particles)
        assert not np.array_equal(before, pcd.particles)

    def test_zero_network_particles_are_fair_coins(self):
        net = Drbn(layers=[RbmParams(W=np.zeros((16, 8)), b=np.zeros(16), c=np.zeros(8))], input_shape=(16,))
        pcd = PcdState(particles=np.zeros((4000, 16)), rng=make_rng(5))
        advance_particles(pcd, net, 2)
        assert pcd.particles.mean() == pytest.approx(0.5, abs=0.01)
        np.testing.assert_allclose(pcd.particles.mean(axis=0), 0.5, atol=0.03)

    def test_k_must_be_positive(self):
        net = _small_net()
        with pytest.raises(ValueError):
            advance_particles(init_pcd(net, 2, make_rng(0)), net, 0)


class TestLayerLoss:
    def test_zero_when_data_equals_particles(self):
        params = random_rbm(5, 3, seed=1)
        x = binary_batch((7, 5))
        assert layer_loss(x, x, params) == pytest.approx(0.0, abs=1e-12)
        for g in layer_loss_grad(x, x, params).values():
            np.testing.assert_allclose(g, 0.0, atol=1e-12)

    def test_gradient_names(self):
        grads = layer_loss_grad(binary_batch((3, 5)), binary_batch((4, 5), seed=1), random_rbm(5, 3))
        assert sorted(grads) == ["W", "b", "c"]

    def test_empty_particles(self):
        with pytest.raises(EmptyBatchError):
            layer_loss(binary_batch((3, 5)), np.zeros((0, 5)), random_rbm(5, 3))


class TestTrainStep:
    def test_zero_learning_rate_leaves_parameters(self):
        net = _small_net()
        config = _config(learning_rate=0.0)
        state = init_training_state(net, config)
        result = train_step(binary_batch((4, 6, 6, 1)), net, state.pcd, state.optimizers, config, state.rng)
        for old, new in zip(net.layers, result.net.layers):
            for name, array in old.as_dict().items():
                np.testing.assert_array_equal(array, new.as_dict()[name])
        assert result.pcd.t == 1
        assert all(opt.t == 1 for opt in result.opt_states)
        assert len(result.losses) == 2

    def test_input_network_untouched(self):
        net = _small_net()
        snapshot = net.copy()
        config = _config()
        state = init_training_state(net, config)
        result = train_step(binary_batch((4, 6, 6, 1)), net, state.pcd, state.optimizers, config, state.rng)
        np.testing.assert_array_equal(net.layers[0].W, snapshot.layers[0].W)
        assert not np.array_equal(result.net.layers[0].W, net.layers[0].W)

    def test_layers_update_from_pre_step_parameters(self):
        net = _small_net()
        config = _config(learning_rate=0.05)
        state = init_training_state(net, config)
        batch = binary_batch((4, 6, 6, 1), seed=2)
        rng, pcd, opts = copy.deepcopy(state.rng), copy.deepcopy(state.pcd), copy.deepcopy(state.optimizers)
        result = train_step(batch, net, state.pcd, state.optimizers, config, state.rng)

        data_terms = collect_data_terms(batch, net, rng)
        particle_terms = advance_particles(pcd, net, config.k)
        for level in reversed(range(net.n_layers)):
            layer = net.layers[level]
            grad = layer_loss_grad(data_terms[level], particle_terms[level], layer)
            arrays, _ = adam_step(layer.as_dict(), grad, opts[level])
            for name, array in arrays.items():
                np.testing.assert_array_equal(result.net.layers[level].as_dict()[name], array)

    def test_optimizer_count_mismatch(self):
        net = _small_net()
        config = _config()
        state = init_training_state(net, config)
        with pytest.raises(ShapeError):
            train_step(binary_batch((4, 6, 6, 1)), net, state.pcd, state.optimizers[:1], config, state.rng)


class TestFit:
    def test_two_runs_agree_bitwise(self):
        data = binary_batch((12, 6, 6, 1), seed=4)

        def run():
            return fit(data, _small_net(), _config(epochs=2), max_steps=5)

        a, b = run(), run()
        for la, lb in zip(a.net.layers, b.net.layers):
            for name in ("W", "b", "c"):
                np.testing.assert_array_equal(la.as_dict()[name], lb.as_dict()[name])
        np.testing.assert_array_equal(a.state.pcd.particles, b.state.pcd.particles)
        assert [r.losses for r in a.log] == [r.losses for r in b.log]

    def test_max_steps_positions_state(self):
        result = fit(binary_batch((12, 6, 6, 1)), _small_net(), _config(epochs=3), max_steps=4)
        assert result.state.step == 4
        assert (result.state.epoch, result.state.batch_index) == (1, 1)
        assert len(result.log) == 4

    def test_zero_epochs_returns_initial_network(self):
        net = _small_net()
        result = fit(binary_batch((8, 6, 6, 1)), net, _config(epochs=0))
        assert result.log == []
        np.testing.assert_array_equal(result.net.layers[1].W, net.layers[1].W)

    def test_free_energy_gap_logged_on_cadence(self):
        data = binary_batch((8, 6, 6, 1))
        result = fit(data, _small_net(), _config(epochs=2, eval_every=2), held_out=data)
        gaps = [r.free_energy_gap for r in result.log]
        assert gaps[0] is None and isinstance(gaps[1], float)
        assert "fe_gap=nan noise_gap=nan" in result.log[0].to_line()
        assert isinstance(result.log[1].noise_gap, float)

    def test_noise_gap_measured_against_fixed_noise(self):
        data = binary_batch((8, 6, 6, 1))
        result = fit(data, _small_net(), _config(epochs=1, eval_every=2), held_out=data)
        noise = noise_reference(data.shape, 3, data.dtype)
        assert result.log[-1].noise_gap == pytest.approx(free_energy_gap(result.net, data, noise))

    def test_resume_rejects_a_different_minibatch(self):
        data = binary_batch((12, 6, 6, 1))
        first = fit(data, _small_net(), _config(epochs=2), max_steps=2)
        assert (first.state.epoch, first.state.batch_index, first.state.batch_size) == (0, 2, 4)
        with pytest.raises(ConfigError, match="minibatch 4"):
            fit(data, first.net, _config(epochs=2, batch_size=6), state=first.state)

    def test_resume_applies_a_new_learning_rate(self):
        data = binary_batch((12, 6, 6, 1))
        first = fit(data, _small_net(), _config(epochs=2), max_steps=2)
        same = copy.deepcopy(first.state)
        slow = fit(data, same.net, _config(epochs=2), state=same, max_steps=1)
        fast = fit(data, first.net, _config(epochs=2, learning_rate=0.5), state=first.state, max_steps=1)
        assert all(opt.lr == 0.5 for opt in fast.state.optimizers)
        moved_slow = np.abs(slow.net.layers[1].W - first.net.layers[1].W).max()
        moved_fast = np.abs(fast.net.layers[1].W - first.net.layers[1].W).max()
        assert moved_fast > 10 * moved_slow

    def test_callbacks_receive_every_record(self):
        seen = []
        fit(binary_batch((8, 6, 6, 1)), _small_net(), _config(epochs=1),
            callbacks=[lambda record, net: seen.append((record.step, net.n_layers))])
        assert seen == [(1, 2), (2, 2)]

    def test_callbacks_do_not_change_training(self):
        data = binary_batch((8, 6, 6, 1), seed=1)
        plain = fit(data, _small_net(), _config(epochs=2))
        watched = fit(data, _small_net(), _config(epochs=2), callbacks=[lambda record, net: None])
        np.testing.assert_array_equal(plain.net.layers[0].W, watched.net.layers[0].W)

    def test_empty_dataset(self):
        with pytest.raises(EmptyBatchError):
            fit(np.zeros((0, 6, 6, 1)), _small_net(), _config())


def test_epoch_permutation_depends_only_on_seed_and_epoch():
    np.testing.assert_array_equal(epoch_permutation(3, 1, 50), epoch_permutation(3, 1, 50))
    assert not np.array_equal(epoch_permutation(3, 1, 50), epoch_permutation(3, 2, 50))
    assert sorted(epoch_permutation(3, 1, 50)) == list(range(50))


@pytest.mark.slow
def test_particle_term_tracks_exact_model_gradient():
    params = random_rbm(4, 3, seed=6, scale=1.0)
    net = Drbn(layers=[params], input_shape=(4,))
    pcd = PcdState(particles=binary_batch((20_000, 4), seed=2), rng=make_rng(8))
    terms = advance_particles(pcd, net, 30)
    ph = 1.0 / (1.0 + np.exp(-(terms[0] @ params.W + params.c)))
    estimate = {"b": -terms[0].mean(axis=0), "W": -(terms[0].T @ ph) / terms[0].shape[0]}
    exact = exact_model_grad(params)
    np.testing.assert_allclose(estimate["b"], exact.db, atol=0.02)
    np.testing.assert_allclose(estimate["W"], exact.dW, atol=0.02)


@pytest.mark.slow
def test_training_raises_exact_log_likelihood():
    data = _two_modes()

    def gain(seed: int) -> float:
        net = init_network(parse_architecture("dense:8", (16,)), make_rng(seed))
        before = exact_log_likelihood(data, net.layers[0])
        config = _config(k=5, n_particles=100, batch_size=10, epochs=200, learning_rate=0.01, seed=seed)
        trained: RbmParams = fit(data, net, config, max_steps=500).net.layers[0]
        return exact_log_likelihood(data, trained) - before

    gains = [gain(seed) for seed in range(10)]
    assert sum(g >= 1.0 for g in gains) >= 9, gains

