import numpy as np
import pytest

from drbn.core.errors import ArchitectureSpecError, ShapeError
from drbn.core.math_core import make_rng
from drbn.core.network import (
    Drbn,
    downward_pass,
    free_energy_gap,
    generate,
    gibbs_iteration,
    init_network,
    layer_energies,
    network_weight_count,
    parse_architecture,
    upward_pass,
)
from drbn.core.rbm import RbmParams, energy, gibbs_step
from tests.helpers import binary_batch, random_rbm

MNIST = (28, 28, 1)


def _zero_net(arch: str, input_shape=MNIST) -> Drbn:
    net = init_network(parse_architecture(arch, input_shape), make_rng(0))
    return net.replace_layers([
        layer.with_arrays({name: np.zeros_like(a) for name, a in layer.as_dict().items()})
        for layer in net.layers
    ])


class TestArchitecture:
    def test_two_layer_count(self):
        assert network_weight_count(parse_architecture("dense:500,dense:1000", MNIST)) == 892_000

    def test_three_layer_count(self):
        assert network_weight_count(parse_architecture("dense:500,dense:500,dense:1000", MNIST)) == 1_142_000

    def test_single_rbm_count(self):
        assert network_weight_count(parse_architecture("dense:1000", MNIST)) == 784_000

    def test_conv_chain(self):
        spec = parse_architecture("conv:64x12s2, conv:128x5s2, dense:512", MNIST)
        assert [layer.hidden_shape for layer in spec.layers] == [(9, 9, 64), (3, 3, 128), (512,)]
        assert spec.layers[2].visible_shape == (1152,)
        assert spec.layers[2].flatten

    def test_conv_weight_count(self):
        spec = parse_architecture("conv:64x12s2,conv:128x5s2,dense:512", MNIST)
        assert network_weight_count(spec) == 64 * 144 + 128 * 25 * 64 + 1152 * 512

    @pytest.mark.parametrize("text, position", [
        ("", 0),
        ("dense:", 6),
        ("dense:500;dense:10", 9),
        ("pool:2", 0),
        ("conv:64y12", 7),
        ("dense:500,conv:4x3", 10),
        ("conv:4x5s2", 0),
        ("dense:0", 6),
    ])
    def test_parse_errors_carry_position(self, text, position):
        with pytest.raises(ArchitectureSpecError) as info:
            parse_architecture(text, MNIST)
        assert info.value.position == position

    def test_drbn_spec_round_trip(self):
        spec = parse_architecture("conv:4x3,dense:7", (6, 6, 1))
        net = init_network(spec, make_rng(1))
        assert net.spec == spec
        assert net.state_shape(1) == (4, 4, 4)


class TestPasses:
    def test_zero_params_half_everywhere(self):
        net = _zero_net("dense:500,dense:1000")
        up = upward_pass(binary_batch((3,) + MNIST), net, make_rng(1))
        assert [s.shape[1:] for s in up.states] == [MNIST, (500,), (1000,)]
        for p in up.probs[1:]:
            np.testing.assert_array_equal(p, 0.5)
        down = downward_pass(up.states[-1], net, make_rng(2))
        np.testing.assert_array_equal(down.probs[0], 0.5)

    def test_conv_shapes(self):
        net = init_network(parse_architecture("conv:64x12s2,conv:128x5s2,dense:512", MNIST), make_rng(0))
        up = upward_pass(binary_batch((2,) + MNIST), net, make_rng(1))
        assert [s.shape[1:] for s in up.states] == [MNIST, (9, 9, 64), (3, 3, 128), (512,)]
        down = downward_pass(up.states[-1], net, make_rng(2))
        assert down.states[0].shape == (2,) + MNIST

    def test_deterministic_probability_pass(self):
        net = init_network(parse_architecture("dense:5,dense:3", (8,)), make_rng(0), std=0.5)
        x = binary_batch((4, 8))
        a = upward_pass(x, net, None, sample=False).states[-1]
        b = upward_pass(x, net, None, sample=False).states[-1]
        np.testing.assert_array_equal(a, b)

    def test_single_layer_matches_gibbs_step(self):
        params = random_rbm(6, 4, seed=2)
        net = Drbn(layers=[params], input_shape=(6,))
        v = binary_batch((5, 6), seed=3)
        x_next, x_prob = gibbs_iteration(v, net, make_rng(11))
        _, v_next, v_prob = gibbs_step(v, params, make_rng(11))
        np.testing.assert_array_equal(x_next, v_next)
        np.testing.assert_array_equal(x_prob, v_prob)

    def test_gibbs_iteration_reproducible(self):
        net = init_network(parse_architecture("dense:6,dense:4", (10,)), make_rng(3), std=0.3)

        def chain(seed):
            rng, x = make_rng(seed), binary_batch((2, 10))
            for _ in range(3):
                x, _ = gibbs_iteration(x, net, rng)
            return x

        np.testing.assert_array_equal(chain(5), chain(5))

    def test_shape_mismatch(self):
        net = init_network(parse_architecture("dense:4", (6,)), make_rng(0))
        with pytest.raises(ShapeError):
            upward_pass(np.zeros((2, 7)), net, make_rng(0))


class TestGenerate:
    def test_untrained_net_is_noise(self):
        net = init_network(parse_architecture("dense:50,dense:20", (8, 8, 1)), make_rng(0))
        images = generate(net, 20, 5, make_rng(1))
        assert images.shape == (20, 8, 8, 1)
        assert np.all((images >= 0) & (images <= 1))
        assert 0.45 <= images.mean() <= 0.55

    def test_seeded_generation_repeats(self):
        net = init_network(parse_architecture("conv:3x3,dense:5", (6, 6, 1)), make_rng(0), std=0.3)
        np.testing.assert_array_equal(generate(net, 4, 3, make_rng(2)), generate(net, 4, 3, make_rng(2)))

    def test_rejects_zero_steps(self):
        net = init_network(parse_architecture("dense:4", (6,)), make_rng(0))
        with pytest.raises(ValueError):
            generate(net, 1, 0, make_rng(0))


def test_layer_energies_are_layer_local():
    net = init_network(parse_architecture("dense:5,dense:3", (6,)), make_rng(0), std=0.5)
    record = upward_pass(binary_batch((4, 6)), net, make_rng(1))
    energies = layer_energies(record, net)
    assert len(energies) == 2
    layer: RbmParams = net.layers[1]
    np.testing.assert_allclose(energies[1], energy(record.states[1], record.states[2], layer))


def test_free_energy_gap_sign():
    params = RbmParams(W=np.zeros((4, 2)), b=np.full(4, 2.0), c=np.zeros(2))
    net = Drbn(layers=[params], input_shape=(4,))
    ones, zeros = np.ones((3, 4)), np.zeros((3, 4))
    assert free_energy_gap(net, ones, zeros) == pytest.approx(8.0)
