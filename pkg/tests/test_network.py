import numpy as np
import pytest

import kanevse.network as kn
from kanevse.network import (
    DimensionMismatch,
    EdgeActivation,
    KanLayer,
    KanNetwork,
    ModelFormatError,
    NetworkError,
    backward,
    classify,
    edge_eval,
    init_network,
    layer_forward,
    load_model,
    network_forward,
    save_model,
    silu,
)
from kanevse.spline import fit_coefficients, make_grid

from oracles import central_difference, network_value, rel_err

GRID = make_grid(3, 3, -1, 1)


def constant_logit_net(l1, l2):
    """Single-input net whose logits are exactly (l1, l2): constant splines, no residual."""
    layer = KanLayer.zeros(1, 2, GRID)
    layer.coeffs[0, 0] = l1
    layer.coeffs[1, 0] = l2
    layer.w_spline[:] = 1.0
    return KanNetwork([layer])


def test_zero_edge_is_zero():
    edge = EdgeActivation(np.ones(6), 0.0, 0.0)
    assert edge_eval(edge, GRID, 0.37) == 0.0


def test_base_function_vanishes_at_origin():
    edge = EdgeActivation(np.zeros(6), 0.0, 1.0)
    assert edge_eval(edge, GRID, 0.0) == 0.0
    assert silu(2.0) == pytest.approx(2.0 / (1.0 + np.exp(-2.0)))


def test_fitted_sine_edge():
    xs = np.linspace(-1, 1, 200)
    edge = EdgeActivation(fit_coefficients(GRID, xs, np.sin(xs)), 1.0, 0.0)
    assert edge_eval(edge, GRID, 0.5) == pytest.approx(np.sin(0.5), abs=1e-3)


def test_zero_layer_gives_zero_vector():
    layer = KanLayer.zeros(3, 4, GRID)
    assert layer_forward(layer, [0.2, -0.9, 5.0]).tolist() == [0.0] * 4


def test_one_by_one_layer_is_edge_eval():
    layer = init_network([1, 1], seed=3).layers[0]
    for x in (-2.0, -0.3, 0.0, 0.8):
        assert layer_forward(layer, [x])[0] == pytest.approx(edge_eval(layer.edge(0, 0), GRID, x), abs=1e-15)


def test_layer_matches_naive_double_loop():
    layer = init_network([3, 2], seed=7).layers[0]
    x = np.array([0.4, -0.75, 0.1])
    expected = [sum(edge_eval(layer.edge(j, i), GRID, x[i]) for i in range(3)) for j in range(2)]
    np.testing.assert_allclose(layer_forward(layer, x), expected, atol=1e-14)


def test_single_layer_network_is_layer_forward():
    net = init_network([3, 2], seed=11)
    x = np.array([0.1, 0.2, -0.4])
    np.testing.assert_array_equal(network_forward(net, x), layer_forward(net.layers[0], x))


def test_default_network_zero_params_gives_zero_logits():
    net = init_network([4, 5, 2], seed=0)
    for p in net.params():
        p[...] = 0.0
    assert network_forward(net, [0.3, -0.1, 0.9, 0.0]).tolist() == [0.0, 0.0]


def test_default_network_matches_independent_evaluator():
    net = init_network([4, 5, 2], seed=42)
    x = [0.1, -0.2, 0.3, 0.0]
    np.testing.assert_allclose(network_forward(net, x), network_value(net, x), atol=1e-12)


def test_forward_shape_errors():
    net = init_network([4, 5, 2], seed=0)
    with pytest.raises(DimensionMismatch):
        network_forward(net, [0.1, 0.2])
    with pytest.raises(DimensionMismatch):
        layer_forward(net.layers[0], [0.1] * 5)


def test_widths_mismatch_rejected_at_construction():
    a = KanLayer.zeros(4, 5, GRID)
    b = KanLayer.zeros(3, 2, GRID)
    with pytest.raises(DimensionMismatch):
        KanNetwork([a, b])
    with pytest.raises(NetworkError):
        init_network([4], seed=0)


@pytest.mark.parametrize("logits,label", [((0.3, 0.9), 1), ((0.9, 0.3), 0), ((0.5, 0.5), 0)])
def test_classify_rule(logits, label):
    net = constant_logit_net(*logits)
    z = network_forward(net, [0.2])
    np.testing.assert_allclose(z, logits, atol=1e-15)
    assert classify(net, [0.2]) == label


def test_classify_tie_goes_to_normal():
    net = constant_logit_net(0.5, 0.5)
    z = network_forward(net, [0.7])
    assert z[0] == z[1]
    assert classify(net, [0.7]) == 0


def test_zero_upstream_gives_zero_gradients():
    net = init_network([4, 5, 2], seed=1)
    for triple in backward(net, [0.1, 0.2, 0.3, 0.4], [0.0, 0.0]):
        for g in triple:
            assert not g.any()


def test_coefficient_gradient_is_basis():
    layer = KanLayer.zeros(1, 1, GRID)
    layer.w_spline[:] = 1.0
    net = KanNetwork([layer])
    (d_coeffs, _, _), = backward(net, [0.35], [1.0])
    from kanevse.spline import basis_eval

    np.testing.assert_array_equal(d_coeffs[0, 0], basis_eval(GRID, 0.35))


def gradient_errors(net, x, upstream, eps=1e-5):
    grads = backward(net, x, upstream)
    worst = 0.0
    for layer, triple in zip(net.layers, grads):
        for p, g in zip(layer.params(), triple):
            for idx in np.ndindex(p.shape):
                old = p[idx]

                def loss(v):
                    p[idx] = v
                    return float(network_forward(net, x) @ upstream)

                fd = central_difference(loss, old, eps)
                p[idx] = old
                worst = max(worst, rel_err(g[idx], fd))
    return worst


def test_default_network_gradients_match_finite_differences():
    net = init_network([4, 5, 2], seed=42)
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, 4)
    assert gradient_errors(net, x, np.array([0.8, -1.1])) <= 1e-4


def test_input_gradient_through_layers():
    net = init_network([2, 3, 2], seed=5)
    caches: list = []
    x = np.array([[0.3, -0.6]])
    net.forward(x, caches)
    up = np.array([[1.0, -0.5]])
    dx = None
    dy = up
    for layer, cache in zip(reversed(net.layers), reversed(caches)):
        dy, _ = layer.backward(cache, dy)
    dx = dy[0]
    for i in range(2):
        def f(v, i=i):
            z = x.copy()
            z[0, i] = v
            return float(net.forward(z)[0] @ up[0])

        assert rel_err(dx[i], central_difference(f, x[0, i])) <= 1e-6


def test_clamped_region_has_no_spline_slope():
    layer = KanLayer.zeros(1, 1, GRID)
    layer.coeffs[0, 0] = np.arange(6.0)
    layer.w_spline[:] = 1.0
    cache: dict = {}
    layer.forward(np.array([[1.7]]), cache)
    dx, _ = layer.backward(cache, np.array([[1.0]]))
    assert dx[0, 0] == 0.0


def test_init_is_deterministic():
    a, b = init_network([4, 5, 2], seed=9), init_network([4, 5, 2], seed=9)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)


def test_init_seed_changes_coefficients():
    a, b = init_network([4, 5, 2], seed=1), init_network([4, 5, 2], seed=2)
    assert any(not np.array_equal(p, q) for p, q in zip(a.params(), b.params()))


def test_init_defaults_and_param_count():
    net = init_network([4, 5, 2], degree=3, num_intervals=3, seed=0)
    assert net.num_params == (4 * 5 + 5 * 2) * (6 + 2) == 240
    assert np.all(net.layers[0].w_spline == 1.0) and np.all(net.layers[0].w_base == 1.0)
    coeffs = np.concatenate([layer.coeffs.ravel() for layer in net.layers])
    assert 0.05 < coeffs.std() < 0.15


def test_parameter_linearity_without_residual():
    net = init_network([4, 3], seed=4, base_weight=0.0)
    x = np.array([0.2, -0.5, 0.9, 0.1])
    z = network_forward(net, x)
    net.layers[0].coeffs *= 2.0
    np.testing.assert_array_equal(network_forward(net, x), 2.0 * z)


def test_save_load_round_trip_is_bitwise():
    net = init_network([4, 5, 2], seed=13)
    net.metadata["standardizer"] = {"mean": [0.1, 5.0, 0.7, 3.5], "std": [0.01, 0.02, 0.1, 0.5], "scale": 3.0}
    back = load_model(save_model(net))
    assert back.widths == net.widths
    assert back.metadata == net.metadata
    for p, q in zip(net.params(), back.params()):
        assert p.tobytes() == q.tobytes()
    assert save_model(back) == save_model(net)


def test_truncated_stream_rejected():
    blob = save_model(init_network([4, 5, 2], seed=0))
    for cut in (10, len(blob) // 2, len(blob) - 5):
        with pytest.raises(ModelFormatError):
            load_model(blob[:cut])


def test_version_mismatch_rejected():
    blob = save_model(init_network([2, 2], seed=0)).replace(kn.FORMAT_VERSION.encode(), b"kan-model/99")
    with pytest.raises(ModelFormatError, match="version"):
        load_model(blob)


def test_inconsistent_dimensions_rejected():
    import json

    doc = json.loads(save_model(init_network([2, 3, 2], seed=0)))
    doc["widths"] = [2, 4, 2]
    with pytest.raises(NetworkError):
        load_model(json.dumps(doc).encode())


def test_reloaded_model_classifies_identically(tmp_path):
    net = init_network([4, 5, 2], seed=21)
    path = tmp_path / "m.kan"
    path.write_bytes(save_model(net))
    other = load_model(path.read_bytes())
    xs = np.random.default_rng(1).uniform(-1.5, 1.5, (1000, 4))
    assert [classify(net, x) for x in xs] == [classify(other, x) for x in xs]
