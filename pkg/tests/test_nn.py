import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qtransfer.errors import DomainError, ShapeError, TraceError
from qtransfer.nn import (Ctx, LayerSpec, Model, backward, backward_from_logits, build_layers,
                          forward, input_gradient, jacobian_wrt_input, loss_cross_entropy,
                          predict, softmax)
from qtransfer.nn.functional import argmax_lowest
from qtransfer.quant import QuantConfig
from qtransfer.zoo import ROSTER, build_model

from conftest import tiny_model


def numeric_input_grad(model, x, labels, h=1e-3):
    """Central differences of the mean cross-entropy, one coordinate at a time."""
    def loss(z):
        return loss_cross_entropy(forward(model, z)[0], labels)

    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = loss(x)
        flat[i] = old - h
        down = loss(x)
        flat[i] = old
        gf[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


# -- forward / predict / loss -----------------------------------------------------

def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.array([[0.0, 0.0]])), [[0.5, 0.5]])


@given(st.lists(st.floats(-30, 30), min_size=2, max_size=8), st.floats(-100, 100))
def test_softmax_shift_invariant(z, c):
    z = np.array([z])
    p = softmax(z)
    np.testing.assert_allclose(softmax(z + c), p, atol=1e-6)
    assert abs(p.sum() - 1) < 1e-5 and p.min() >= 0


def test_two_layer_dense_matches_hand_arithmetic():
    specs = [LayerSpec("dense", units=2), LayerSpec("relu"), LayerSpec("dense", units=2)]
    params = {"00_dense.W": np.array([[1.0, -1.0], [2.0, 0.5]]), "00_dense.b": np.array([0.0, 1.0]),
              "02_dense.W": np.array([[1.0, 0.0], [-1.0, 2.0]]), "02_dense.b": np.array([0.5, 0.0])}
    m = Model(specs, (2,), params=params, dtype=np.float64)
    # h = relu([1*1 + 2*2, -1*1 + 0.5*2 + 1]) = [5, 1]; z = [5 - 1 + 0.5, 2] = [4.5, 2]
    probs, logits, trace = forward(m, np.array([[1.0, 2.0]]))
    np.testing.assert_allclose(logits, [[4.5, 2.0]])
    e = np.exp([4.5, 2.0])
    np.testing.assert_allclose(probs, [e / e.sum()])
    assert len(trace.caches) == len(m.layers)


def test_predict_tie_breaks_low():
    assert list(argmax_lowest(np.array([[0.1, 0.7, 0.2], [0.5, 0.5, 0.0]]))) == [1, 0]
    assert list(argmax_lowest(np.eye(4))) == [0, 1, 2, 3]
    m = Model([LayerSpec("dense", units=3, bias=False)], (2,), params={"00_dense.W": np.zeros((2, 3))})
    assert list(predict(m, np.ones((4, 2)))) == [0, 0, 0, 0]


def test_cross_entropy_examples():
    assert loss_cross_entropy(np.array([[0.0, 1.0]]), [1]) == 0.0
    e = np.exp(-1)
    assert loss_cross_entropy(np.array([[e, 1 - e]]), [0]) == pytest.approx(1.0)
    assert loss_cross_entropy(np.full((3, 7), 1 / 7), [0, 3, 6]) == pytest.approx(np.log(7))
    with pytest.raises(DomainError):
        loss_cross_entropy(np.full((1, 3), 1 / 3), [3])


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        forward(tiny_model(), np.zeros((2, 9, 9, 1)))


def test_probability_simplex(rng):
    probs, _, _ = forward(tiny_model(seed=2), rng.uniform(size=(6, 8, 8, 1)))
    assert probs.min() >= 0 and probs.max() <= 1
    np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-5)


# -- backward -----------------------------------------------------------------------

def test_symmetric_zero_weight_head_has_zero_input_grad():
    specs = [LayerSpec("dense", units=3), LayerSpec("relu"), LayerSpec("dense", units=2)]
    m = Model(specs, (2,), seed=0, dtype=np.float64)
    m.params["02_dense.W"][:] = 0
    g = input_gradient(m, np.array([[0.3, 0.3]]), [0])
    np.testing.assert_array_equal(g, 0)


def test_linear_layer_sum_gradient_is_column_sums(rng):
    W = rng.standard_normal((4, 3))
    m = Model([LayerSpec("dense", units=3, bias=False)], (4,), params={"00_dense.W": W}, dtype=np.float64)
    _, _, trace = forward(m, rng.standard_normal((2, 4)))
    _, dx = backward_from_logits(m, trace, np.ones((2, 3)))
    np.testing.assert_allclose(dx, np.tile(W.sum(axis=1), (2, 1)))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_input_gradient_matches_finite_differences(seed):
    m = tiny_model(seed=seed).as_float64()
    assert m.num_params <= 10_000
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.05, 0.95, size=(2, 8, 8, 1))
    labels = rng.integers(0, 3, size=2)
    analytic = input_gradient(m, x, labels)
    numeric = numeric_input_grad(m, x.copy(), labels)
    ok = (rel_err(analytic, numeric) <= 1e-3) | (np.abs(analytic - numeric) < 1e-9)
    assert ok.mean() >= 0.95


CONV_CASES = [
    dict(channels=5, kernel=3, stride=1, padding="same"),   # Cin < Cout: scatter path
    dict(channels=2, kernel=3, stride=2, padding="same"),   # Cin >= Cout: transposed path
    dict(channels=2, kernel=2, stride=2, padding="valid"),
    dict(channels=4, kernel=3, stride=2, padding=1),
    dict(channels=3, kernel=3, stride=1, padding="valid"),
]


@pytest.mark.parametrize("case", CONV_CASES)
def test_conv_gradients_match_finite_differences(case):
    rng = np.random.default_rng(7)
    specs = [LayerSpec("conv2d", **case), LayerSpec("flatten"), LayerSpec("dense", units=3)]
    m = Model(specs, (7, 7, 3), seed=4, dtype=np.float64)
    x = rng.uniform(size=(2, 7, 7, 3))
    labels = np.array([0, 2])
    analytic = input_gradient(m, x, labels)
    numeric = numeric_input_grad(m, x.copy(), labels, h=1e-5)
    np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)

    probs, _, trace = forward(m, x)
    grads, _ = backward(m, trace, labels)
    name = "00_conv2d.W"
    w = m.params[name]
    for idx in [(0, 0, 0, 0), (1, 1, 2, case["channels"] - 1), (case["kernel"] - 1, 0, 1, 0)]:
        old = w[idx]
        w[idx] = old + 1e-5
        m.touch()
        up = loss_cross_entropy(forward(m, x)[0], labels)
        w[idx] = old - 1e-5
        m.touch()
        down = loss_cross_entropy(forward(m, x)[0], labels)
        w[idx] = old
        m.touch()
        assert grads[name][idx] == pytest.approx((up - down) / 2e-5, rel=1e-5, abs=1e-9)


def reference_maxpool(x, k, s, pads):
    """Loop oracle: forward max and first-max gradient routing."""
    (pt, pb), (pl, pr) = pads
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=-np.inf)
    n, h, w, c = xp.shape
    ho, wo = (h - k) // s + 1, (w - k) // s + 1
    y = np.empty((n, ho, wo, c))
    route = np.zeros(xp.shape + (ho, wo), dtype=bool)
    for b in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    win = xp[b, i * s:i * s + k, j * s:j * s + k, ch]
                    r, q = divmod(int(np.argmax(win)), k)
                    y[b, i, j, ch] = win[r, q]
                    route[b, i * s + r, j * s + q, ch, i, j] = True
    return y, route, xp.shape


@pytest.mark.parametrize("k,s,pad,shape", [
    (2, 2, "valid", (6, 6, 2)),   # tiled fast path
    (3, 3, "valid", (6, 9, 1)),   # tiled fast path
    (3, 2, "same", (7, 7, 2)),    # overlapping windows
    (2, 2, "same", (5, 5, 1)),    # padding needed
    (2, 1, "valid", (4, 5, 2)),
])
def test_maxpool_matches_loop_oracle(k, s, pad, shape):
    rng = np.random.default_rng(11)
    # integer values force ties; the gradient must go to the first maximum only
    x = rng.integers(0, 3, size=(2,) + shape).astype(np.float64)
    (layer,) = build_layers([LayerSpec("maxpool", kernel=k, stride=s, padding=pad)], shape)
    y, cache = layer.forward(x, {}, Ctx())
    ry, route, padded = reference_maxpool(x, k, s, layer.pads)
    np.testing.assert_array_equal(y, ry)
    dy = rng.standard_normal(y.shape)
    dx, _ = layer.backward(dy, cache, {}, Ctx())
    ref = np.einsum("nhwcij,nijc->nhwc", route.astype(float), dy)
    (pt, _), (pl, _) = layer.pads
    ref = ref[:, pt:pt + shape[0], pl:pl + shape[1]]
    np.testing.assert_allclose(dx, ref)


def test_quantized_relu_blocks_gradient_above_clip():
    m = Model([LayerSpec("relu"), LayerSpec("dense", units=2, bias=False)], (3,),
              quant=QuantConfig(0, 2, exempt_first_layer=True), dtype=np.float64,
              params={"01_dense.W": np.array([[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]])})
    _, _, trace = forward(m, np.array([[-0.5, 0.4, 1.5]]))
    _, dx = backward_from_logits(m, trace, np.array([[1.0, 0.0]]))
    np.testing.assert_array_equal(dx, [[0.0, 1.0, 0.0]])


def test_stale_trace_rejected(rng):
    m = tiny_model()
    x = rng.uniform(size=(2, 8, 8, 1))
    _, _, trace = forward(m, x)
    m.touch()
    with pytest.raises(TraceError):
        backward(m, trace, [0, 1])
    with pytest.raises(TraceError):
        backward(tiny_model(), forward(tiny_model(), x)[2], [0, 1])


def test_forward_backward_deterministic(rng):
    x = rng.uniform(size=(3, 8, 8, 1))
    a, b = tiny_model(bits=4, seed=9), tiny_model(bits=4, seed=9)
    ga, gb = input_gradient(a, x, [0, 1, 2]), input_gradient(b, x, [0, 1, 2])
    np.testing.assert_array_equal(ga, gb)
    np.testing.assert_array_equal(forward(a, x)[1], forward(b, x)[1])


# -- jacobian ---------------------------------------------------------------------

def test_jacobian_columns_sum_to_zero(rng):
    m = tiny_model(seed=5)
    jac = jacobian_wrt_input(m, rng.uniform(size=(8, 8, 1)))
    assert jac.shape == (3, 64)
    np.testing.assert_allclose(jac.sum(axis=0), 0, atol=1e-5)


def test_jacobian_of_constant_model_is_zero():
    m = tiny_model()
    for k in m.params:
        m.params[k][:] = 0
    m.touch()
    np.testing.assert_array_equal(jacobian_wrt_input(m, np.full((8, 8, 1), 0.5)), 0)


def test_jacobian_logistic_toy():
    # z = [0, w x + b]: f_1 = sigmoid(w x + b), df_1/dx = w s (1 - s), df_0/dx = -that
    w, b, x = 1.7, -0.4, 0.3
    m = Model([LayerSpec("dense", units=2)], (1,), dtype=np.float64,
              params={"00_dense.W": np.array([[0.0, w]]), "00_dense.b": np.array([0.0, b])})
    s = 1 / (1 + np.exp(-(w * x + b)))
    np.testing.assert_allclose(jacobian_wrt_input(m, np.array([x])), [[-w * s * (1 - s)], [w * s * (1 - s)]])


def test_jacobian_true_row_matches_scaled_nll_gradient(rng):
    # d(-log f_y)/dx = -(1 / f_y) * d f_y / dx
    m = tiny_model(seed=8).as_float64()
    x = rng.uniform(size=(1, 8, 8, 1))
    probs = forward(m, x)[0][0]
    jac = jacobian_wrt_input(m, x)
    g = input_gradient(m, x, [2]).reshape(-1)
    np.testing.assert_allclose(-jac[2] / probs[2], g, atol=1e-4)


# -- roster ----------------------------------------------------------------------

@pytest.mark.parametrize("mid", list(ROSTER))
def test_roster_parameter_counts(mid):
    entry = ROSTER[mid]
    n = build_model(mid).num_params
    assert abs(n - entry.expected_params) <= 0.05 * entry.expected_params


def test_roster_ordering_and_seed_determinism():
    counts = {m: build_model(m).num_params for m in ("Resnet20", "Resnet32", "Resnet44")}
    assert counts["Resnet44"] > counts["Resnet32"] > counts["Resnet20"]
    a, b = build_model("MnistA", seed=3), build_model("MnistA", seed=3)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert build_model("MnistA", seed=4).num_params == a.num_params
