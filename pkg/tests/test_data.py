import gzip
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qtransfer.data import (CIFAR_RECORD, Dataset, SyntheticParams, encode_cifar_batch,
                            encode_idx_images, encode_idx_labels, gen_synthetic, load_cifar10,
                            load_dataset, load_mnist, parse_cifar_batch, parse_idx_images,
                            parse_idx_labels, parse_synthetic_spec, write_mnist)
from qtransfer.errors import ConfigError, DomainError, FormatError


def fake_mnist(rng, n):
    return rng.integers(0, 256, size=(n, 28, 28), dtype=np.uint8), rng.integers(0, 10, size=n)


def test_idx_header_words(rng):
    images, labels = fake_mnist(rng, 3)
    img, lbl = encode_idx_images(images), encode_idx_labels(labels)
    assert img[:4] == bytes.fromhex("00000803")  # 2051
    assert lbl[:4] == bytes.fromhex("00000801")  # 2049
    assert len(lbl) == 8 + 3
    assert len(img) == 16 + 3 * 784


def test_idx_round_trip_and_normalization(tmp_path, rng):
    images, labels = fake_mnist(rng, 5)
    images[0, 0, 0] = 255
    images[0, 0, 1] = 0
    write_mnist(tmp_path, (images, labels), (images[:2], labels[:2]), compress=True)
    train, test = load_mnist(tmp_path)
    assert train.x.shape == (5, 28, 28, 1) and len(test) == 2
    assert train.x[0, 0, 0, 0] == 1.0 and train.x[0, 0, 1, 0] == 0.0
    np.testing.assert_array_equal(train.y, labels)
    np.testing.assert_allclose(train.x[..., 0] * 255, images, atol=1e-4)


@pytest.mark.parametrize("mutate,match", [
    (lambda b: b"\x00\x00\x08\x04" + b[4:], "magic"),
    (lambda b: b[:-1], "truncated"),
    (lambda b: b[:10], "header truncated"),
    (lambda b: b + b"\x00", "trailing"),
])
def test_idx_images_rejects_corruption(rng, mutate, match):
    buf = encode_idx_images(fake_mnist(rng, 2)[0])
    with pytest.raises(FormatError, match=match) as e:
        parse_idx_images(mutate(buf))
    assert e.value.offset is not None


def test_idx_labels_rejects_corruption():
    buf = encode_idx_labels([1, 2, 3])
    with pytest.raises(FormatError, match="magic"):
        parse_idx_labels(struct.pack(">I", 2051) + buf[4:])
    with pytest.raises(FormatError, match="length"):
        parse_idx_labels(buf[:-1])
    np.testing.assert_array_equal(parse_idx_labels(buf), [1, 2, 3])


def test_load_mnist_reports_file_and_offset(tmp_path, rng):
    images, labels = fake_mnist(rng, 4)
    write_mnist(tmp_path, (images, labels), (images, labels))
    p = tmp_path / "t10k-images-idx3-ubyte"
    p.write_bytes(p.read_bytes()[:100])
    with pytest.raises(FormatError, match="t10k-images-idx3-ubyte.*offset 100"):
        load_mnist(tmp_path)


def reference_cifar_decode(record: bytes):
    """Independent per-pixel decoder: byte 0 label, then 1024 R, 1024 G, 1024 B."""
    img = np.zeros((32, 32, 3))
    for ch in range(3):
        for r in range(32):
            for c in range(32):
                img[r, c, ch] = record[1 + ch * 1024 + r * 32 + c] / 255
    return img, record[0]


def test_cifar_plane_order_matches_reference(rng):
    images = rng.integers(0, 256, size=(3, 32, 32, 3), dtype=np.uint8)
    images[1, 5, 7] = (255, 0, 0)  # a pure red pixel
    buf = encode_cifar_batch(images, [3, 9, 0])
    assert len(buf) == 3 * CIFAR_RECORD == 3 * 3073
    x, y = parse_cifar_batch(buf)
    assert list(y) == [3, 9, 0]
    np.testing.assert_array_equal(x[1, 5, 7], [1.0, 0.0, 0.0])
    for i in range(3):
        ref, label = reference_cifar_decode(buf[i * CIFAR_RECORD:(i + 1) * CIFAR_RECORD])
        np.testing.assert_allclose(x[i], ref, atol=1e-7)
        assert label == y[i]


def test_cifar_rejects_misalignment_and_bad_labels(rng):
    images = rng.integers(0, 256, size=(2, 32, 32, 3), dtype=np.uint8)
    buf = encode_cifar_batch(images, [1, 2])
    with pytest.raises(FormatError, match="multiple") as e:
        parse_cifar_batch(buf[:-5])
    assert e.value.offset == CIFAR_RECORD
    bad = bytearray(buf)
    bad[CIFAR_RECORD] = 10
    with pytest.raises(FormatError, match="label") as e:
        parse_cifar_batch(bytes(bad))
    assert e.value.offset == CIFAR_RECORD


def test_load_cifar10_directory(tmp_path, rng):
    for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
        images = rng.integers(0, 256, size=(2, 32, 32, 3), dtype=np.uint8)
        (tmp_path / name).write_bytes(encode_cifar_batch(images, [0, 1]))
    train, test = load_cifar10(tmp_path)
    assert train.x.shape == (10, 32, 32, 3) and test.x.shape == (2, 32, 32, 3)
    assert load_dataset(str(tmp_path))[1].name == "cifar10-test"


def test_synthetic_is_deterministic_and_bounded():
    p = SyntheticParams(classes=4, height=10, width=12, channels=3, train_per_class=5, test_per_class=2)
    a, b = gen_synthetic(p), gen_synthetic(p)
    np.testing.assert_array_equal(a[0].x, b[0].x)
    np.testing.assert_array_equal(a[1].y, b[1].y)
    assert a[0].x.shape == (20, 10, 12, 3) and len(a[1]) == 8
    assert a[0].x.min() >= 0 and a[0].x.max() <= 1
    assert not np.array_equal(gen_synthetic(SyntheticParams(seed=1, train_per_class=2))[0].x,
                              gen_synthetic(SyntheticParams(seed=2, train_per_class=2))[0].x)
    with pytest.raises(DomainError):
        gen_synthetic(SyntheticParams(classes=1))


def test_synthetic_descriptor():
    p = parse_synthetic_spec("synthetic:classes=2,train_per_class=7,noise=0.2")
    assert (p.classes, p.train_per_class, p.noise) == (2, 7, 0.2)
    with pytest.raises(ConfigError):
        parse_synthetic_spec("synthetic:colour=3")
    train, _ = load_dataset("synthetic:classes=2,train_per_class=3,height=6,width=6")
    assert train.x.shape == (6, 6, 6, 1)


def test_dataset_validation_and_selection():
    x = np.linspace(0, 1, 4 * 4).reshape(4, 2, 2, 1)
    d = Dataset(x, [0, 1, 2, 3], index=[10, 11, 12, 13])
    assert list(d.by_index([13, 10]).y) == [3, 0]
    assert list(d.head(2).index) == [10, 11]
    with pytest.raises(DomainError):
        Dataset(x * 2, [0, 1, 2, 3])
    with pytest.raises(DomainError):
        Dataset(x, [0, 1, 2, 10])
    with pytest.raises(DomainError):
        Dataset(x, [0, 1])


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_idx_encode_parse_inverse(n, seed):
    rng = np.random.default_rng(seed)
    images = rng.integers(0, 256, size=(n, 28, 28), dtype=np.uint8)
    np.testing.assert_array_equal(np.rint(parse_idx_images(encode_idx_images(images))[..., 0] * 255), images)


def test_gzip_members_are_reproducible(tmp_path, rng):
    images, labels = fake_mnist(rng, 2)
    write_mnist(tmp_path / "a", (images, labels), (images, labels), compress=True)
    write_mnist(tmp_path / "b", (images, labels), (images, labels), compress=True)
    name = "train-images-idx3-ubyte.gz"
    assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert gzip.decompress((tmp_path / "a" / name).read_bytes())[:4] == b"\x00\x00\x08\x03"
