import numpy as np
import pytest

from qtransfer.checkpoint import (checkpoint_digest, decode_checkpoint, encode_checkpoint,
                                  load_checkpoint, load_checkpoint_with_header, save_checkpoint)
from qtransfer.errors import FormatError
from qtransfer.nn import forward
from qtransfer.quant import QuantConfig
from qtransfer.zoo import build_model

from conftest import tiny_model


@pytest.mark.parametrize("bits", [0, 1, 4, 16])
def test_round_trip_is_bitwise(tmp_path, rng, bits):
    m = tiny_model(bits=bits, seed=6)
    x = rng.uniform(size=(4, 8, 8, 1))
    digest = save_checkpoint(tmp_path / "m.qntk", m, meta={"note": "x"})
    back, header = load_checkpoint_with_header(tmp_path / "m.qntk")
    assert header["meta"] == {"note": "x"} and header["quant"]["weight_bits"] == bits
    assert checkpoint_digest(tmp_path / "m.qntk") == digest
    assert back.quant == m.quant and back.model_id == "Tiny"
    np.testing.assert_array_equal(forward(back, x)[1], forward(m, x)[1])


def test_round_trip_with_buffers(rng):
    m = build_model("Resnet20", QuantConfig.uniform(4), seed=1)
    for k in m.buffers:
        m.buffers[k][:] = rng.uniform(0.5, 1.5, size=m.buffers[k].shape)
    back, _ = decode_checkpoint(encode_checkpoint(m))
    x = rng.uniform(size=(2, 32, 32, 3))
    np.testing.assert_array_equal(forward(back, x)[1], forward(m, x)[1])


def test_blob_is_little_endian_float32():
    m = tiny_model()
    buf = encode_checkpoint(m)
    first = next(iter(m.params.values())).reshape(-1)
    assert buf.find(first.astype("<f4").tobytes()) > 0


@pytest.mark.parametrize("mutate,match", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + b"\x09\x00" + b[6:], "version"),
    (lambda b: b[:200] + bytes([b[200] ^ 1]) + b[201:], "digest"),
    (lambda b: b[:-40], "digest"),
    (lambda b: b[:20], "truncated"),
])
def test_corruption_detected(mutate, match):
    buf = encode_checkpoint(tiny_model())
    with pytest.raises(FormatError, match=match):
        decode_checkpoint(mutate(buf))


def test_save_is_atomic_and_leaves_no_temp(tmp_path):
    path = tmp_path / "m.qntk"
    save_checkpoint(path, tiny_model(seed=1))
    save_checkpoint(path, tiny_model(seed=2))
    assert [p.name for p in tmp_path.iterdir()] == ["m.qntk"]
    assert load_checkpoint(path).seed == 2
