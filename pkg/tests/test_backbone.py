import numpy as np
import pytest

from oodlab import backbone
from oracles import central_difference, max_rel_error


def random_net(rng, widths=None):
    widths = widths or [int(rng.integers(2, 5)) for _ in range(3)]
    return backbone.init_mlp(widths, rng)


def flatten_params(params):
    return np.concatenate([np.concatenate([l.weight.ravel(), l.bias]) for l in params.layers])


def set_params(params, flat):
    offset = 0
    for layer in params.layers:
        n = layer.weight.size
        layer.weight[...] = flat[offset : offset + n].reshape(layer.weight.shape)
        offset += n
        layer.bias[...] = flat[offset : offset + layer.bias.size]
        offset += layer.bias.size


class TestForward:
    def test_zero_network(self):
        net = backbone.MlpParams(
            layers=[
                backbone.Layer(weight=np.zeros((3, 2)), bias=np.zeros(3), activation="relu"),
                backbone.Layer(weight=np.zeros((2, 3)), bias=np.zeros(2), activation="none"),
            ]
        )
        z, _ = backbone.mlp_forward(net, np.array([5.0, -7.0]))
        np.testing.assert_allclose(z, np.zeros(2))

    def test_identity_single_layer(self):
        net = backbone.MlpParams(layers=[backbone.Layer(weight=np.eye(3), bias=np.zeros(3), activation="none")])
        x = np.array([1.0, -2.0, 3.0])
        z, _ = backbone.mlp_forward(net, x)
        np.testing.assert_allclose(z, x)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        net = random_net(rng)
        x = rng.standard_normal(net.in_dim)
        z1, _ = backbone.mlp_forward(net, x)
        z2, _ = backbone.mlp_forward(net, x)
        np.testing.assert_array_equal(z1, z2)

    def test_hidden_activations_nonnegative(self):
        rng = np.random.default_rng(2)
        net = random_net(rng, widths=[3, 8, 8, 2])
        for _ in range(50):
            x = 3.0 * rng.standard_normal(3)
            _, cache = backbone.mlp_forward(net, x)
            for layer, (_, pre) in zip(net.layers, cache):
                if layer.activation == "relu":
                    assert np.all(np.maximum(pre, 0.0) >= 0.0)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(3)
        net = random_net(rng, widths=[4, 6, 3])
        xs = rng.standard_normal((5, 4))
        batch, _ = backbone.forward_batch(net, xs)
        for row, x in zip(batch, xs):
            single, _ = backbone.mlp_forward(net, x)
            np.testing.assert_allclose(row, single)

    def test_final_activation_must_be_none(self):
        with pytest.raises(ValueError):
            backbone.MlpParams(layers=[backbone.Layer(weight=np.eye(2), bias=np.zeros(2), activation="relu")])


class TestBackward:
    def test_zero_upstream(self):
        rng = np.random.default_rng(4)
        net = random_net(rng)
        x = rng.standard_normal(net.in_dim)
        _, cache = backbone.mlp_forward(net, x)
        grads, d_x = backbone.mlp_backward(net, cache, np.zeros(net.out_dim))
        assert np.all(d_x == 0)
        for d_w, d_b in grads:
            assert np.all(d_w == 0) and np.all(d_b == 0)

    def test_identity_layer_passes_gradient(self):
        net = backbone.MlpParams(layers=[backbone.Layer(weight=np.eye(3), bias=np.zeros(3), activation="none")])
        x = np.array([1.0, 2.0, 3.0])
        _, cache = backbone.mlp_forward(net, x)
        d_z = np.array([0.1, -0.2, 0.3])
        _, d_x = backbone.mlp_backward(net, cache, d_z)
        np.testing.assert_allclose(d_x, d_z)

    @pytest.mark.parametrize("seed", range(10))
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(100 + seed)
        net = random_net(rng, widths=[3, 6, 5, 2])
        x = rng.standard_normal(3)
        upstream = rng.standard_normal(2)

        _, cache = backbone.mlp_forward(net, x)
        grads, d_x = backbone.mlp_backward(net, cache, upstream)

        fd_x = central_difference(lambda xv: float(upstream @ backbone.mlp_forward(net, xv)[0]), x)
        assert max_rel_error(d_x, fd_x) < 1e-5

        flat = flatten_params(net)
        analytic = np.concatenate([np.concatenate([d_w.ravel(), d_b]) for d_w, d_b in grads])

        def loss_of_params(fv):
            set_params(net, fv)
            value = float(upstream @ backbone.mlp_forward(net, x)[0])
            set_params(net, flat)
            return value

        fd_params = central_difference(loss_of_params, flat)
        assert max_rel_error(analytic, fd_params) < 1e-5


class TestInit:
    def test_seeded_init_reproducible(self):
        a = backbone.init_mlp([2, 16, 8], np.random.Generator(np.random.PCG64(9)))
        b = backbone.init_mlp([2, 16, 8], np.random.Generator(np.random.PCG64(9)))
        for la, lb in zip(a.layers, b.layers):
            np.testing.assert_array_equal(la.weight, lb.weight)

    def test_widths_property(self):
        net = backbone.init_mlp([2, 64, 64, 8], np.random.default_rng(0))
        assert net.widths == (2, 64, 64, 8)
        assert net.layers[0].activation == "relu"
        assert net.layers[-1].activation == "none"
