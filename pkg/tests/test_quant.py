import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qtransfer.errors import DomainError
from qtransfer.nn import forward
from qtransfer.quant import (FP, QuantConfig, attach_quantizers, parse_bits, quantize_activations,
                             quantize_k, quantize_weights, ste_backward)

from conftest import tiny_model

BITS = st.sampled_from([1, 2, 3, 4, 8, 12, 16])
unit = st.floats(0.0, 1.0, allow_nan=False)


def test_quantize_k_examples():
    assert quantize_k(0.0, 4) == 0.0
    assert quantize_k(1.0, 1) == 1.0
    assert quantize_k(0.4, 2) == pytest.approx(1 / 3, abs=1e-12)
    # exact half rounds away from zero
    assert quantize_k(0.5, 1) == 1.0
    assert quantize_k(1.5 / 3, 2) == pytest.approx(2 / 3)


def test_quantize_k_rejects_out_of_range():
    with pytest.raises(DomainError):
        quantize_k(1.2, 2)
    with pytest.raises(DomainError):
        quantize_k(np.array([0.1, -0.01]), 2)
    with pytest.raises(DomainError):
        quantize_k(0.5, FP)


@given(unit, BITS)
def test_quantize_k_on_lattice(r, n):
    levels = 2**n - 1
    q = quantize_k(r, n)
    k = q * levels
    assert abs(k - round(k)) < 1e-6
    assert abs(q - r) <= 1 / (2 * levels) + 1e-12


@given(arrays(np.float32, 12, elements=st.floats(0, 1, width=32)), BITS)
def test_quantize_k_idempotent(a, n):
    once = quantize_k(a, n)
    assert once.dtype == np.float32
    np.testing.assert_array_equal(quantize_k(once, n), once)


def test_ste_is_identity(rng):
    g = rng.standard_normal((3, 4, 5)).astype(np.float32)
    assert ste_backward(g) is g
    assert ste_backward(0.7) == 0.7
    np.testing.assert_array_equal(ste_backward(np.zeros(4)), np.zeros(4))


def test_quantize_activations_examples():
    assert quantize_activations(np.array([-0.3]), 2)[0] == 0.0
    assert quantize_activations(np.array([0.6]), 1)[0] == 1.0
    assert quantize_activations(np.array([7.0]), 4)[0] == 1.0
    lattice = np.arange(4) / 3
    np.testing.assert_array_equal(quantize_activations(lattice, 2), lattice)
    x = np.array([0.2, 3.0])
    assert quantize_activations(x, FP) is x


def test_quantize_weights_examples():
    np.testing.assert_array_equal(quantize_weights(np.zeros(5, np.float32), 3), np.zeros(5))
    np.testing.assert_array_equal(quantize_weights(np.array([-1.0, 1.0]), 1), [-1.0, 1.0])
    # M = 1: w -> (w + 1) / 2 = [0, 0.4, 0.7, 1] -> round(3 r) / 3 = [0, 1/3, 2/3, 1] -> 2q - 1
    got = quantize_weights(np.array([-1.0, -0.2, 0.4, 1.0]), 2)
    np.testing.assert_allclose(got, [-1.0, -1 / 3, 1 / 3, 1.0], atol=1e-15)


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-5, 5)), BITS)
def test_quantize_weights_lattice(w, n):
    q = quantize_weights(w, n)
    m = np.max(np.abs(w))
    assert np.all(np.abs(q) <= m + 1e-12)
    assert len(np.unique(q)) <= 2**n
    if m > 0:
        k = (q / m + 1) / 2 * (2**n - 1)
        np.testing.assert_allclose(k, np.round(k), atol=1e-6)


def test_one_bit_weights_take_two_values():
    m = tiny_model(bits=1)
    eff = m.effective_params()
    for name in m.quantized_weight_names():
        assert len(np.unique(eff[name])) <= 2
    # first and last layers stay full precision
    names = m.weight_names()
    assert names[0] not in m.quantized_weight_names()
    assert names[-1] not in m.quantized_weight_names()


def test_attach_fp_is_bitwise_identity(rng):
    m = tiny_model()
    x = rng.uniform(size=(5, 8, 8, 1)).astype(np.float32)
    fp = attach_quantizers(m, QuantConfig())
    np.testing.assert_array_equal(forward(m, x)[1], forward(fp, x)[1])
    q = attach_quantizers(m, QuantConfig.uniform(2))
    assert q.quant.weight_bits == 2 and m.quant.is_fp
    assert not np.array_equal(forward(m, x)[1], forward(q, x)[1])


def test_parse_bits():
    assert parse_bits("FP") == 0 and parse_bits("fp") == 0 and parse_bits("8") == 8
    for bad in ("17", "x", "-1"):
        with pytest.raises(DomainError):
            parse_bits(bad)
    assert QuantConfig.uniform(4).label == "4"
    assert QuantConfig().label == "FP"
    assert QuantConfig(2, 4).label == "W2A4"
