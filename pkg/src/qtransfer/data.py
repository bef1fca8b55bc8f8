"""Dataset containers and loaders (MNIST IDX, CIFAR-10 binary, synthetic blobs)."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError, FormatError

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049
CIFAR_RECORD = 1 + 32 * 32 * 3


@dataclass
class Dataset:
    """Images ``x`` (N, H, W, C) in [0, 1] with integer labels ``y``.

    ``index`` holds each sample's position in the split it came from, so
    subsets keep a stable identity (the attacks key their per-sample random
    streams on it).
    """

    x: np.ndarray
    y: np.ndarray
    name: str = ""
    num_classes: int = 10
    index: np.ndarray = field(default=None)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float32)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.index is None:
            self.index = np.arange(len(self.y))
        self.index = np.asarray(self.index, dtype=np.int64)
        if not (len(self.x) == len(self.y) == len(self.index)):
            raise DomainError("images, labels and indices disagree on sample count")
        if self.x.size and (self.x.min() < 0.0 or self.x.max() > 1.0):
            raise DomainError(f"{self.name}: pixel values must lie in [0, 1]")
        if self.y.size and (self.y.min() < 0 or self.y.max() >= self.num_classes):
            raise DomainError(f"{self.name}: labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.y)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return Dataset(self.x[rows], self.y[rows], self.name, self.num_classes, self.index[rows])

    def head(self, n: int) -> "Dataset":
        return self.subset(np.arange(min(n, len(self))))

    def by_index(self, indices) -> "Dataset":
        """Select samples by their ``index`` value (not row position)."""
        pos = {int(v): i for i, v in enumerate(self.index)}
        return self.subset([pos[int(i)] for i in indices])

    @property
    def input_shape(self) -> tuple:
        return tuple(self.x.shape[1:])


# -- MNIST IDX ---------------------------------------------------------------

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _read_maybe_gz(path: Path) -> bytes:
    for candidate in (path, path.with_name(path.name + ".gz")):
        if candidate.exists():
            raw = candidate.read_bytes()
            return gzip.decompress(raw) if candidate.suffix == ".gz" else raw
    raise FileNotFoundError(f"missing IDX file {path}[.gz]")


def parse_idx_images(buf: bytes) -> np.ndarray:
    if len(buf) < 16:
        raise FormatError("IDX image header truncated", offset=len(buf))
    magic, n, rows, cols = struct.unpack(">IIII", buf[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(f"bad IDX image magic {magic} (expected {IDX_IMAGES_MAGIC})", offset=0)
    need = 16 + n * rows * cols
    if len(buf) < need:
        raise FormatError(f"IDX image data truncated: {len(buf)} of {need} bytes", offset=len(buf))
    if len(buf) > need:
        raise FormatError("trailing bytes after IDX image data", offset=need)
    pixels = np.frombuffer(buf, dtype=np.uint8, offset=16).reshape(n, rows, cols, 1)
    return pixels.astype(np.float32) / np.float32(255.0)


def parse_idx_labels(buf: bytes) -> np.ndarray:
    if len(buf) < 8:
        raise FormatError("IDX label header truncated", offset=len(buf))
    magic, n = struct.unpack(">II", buf[:8])
    if magic != IDX_LABELS_MAGIC:
        raise FormatError(f"bad IDX label magic {magic} (expected {IDX_LABELS_MAGIC})", offset=0)
    if len(buf) != 8 + n:
        raise FormatError(f"IDX label file length {len(buf)} != {8 + n}", offset=min(len(buf), 8 + n))
    return np.frombuffer(buf, dtype=np.uint8, offset=8).astype(np.int64)


def encode_idx_images(images: np.ndarray) -> bytes:
    """``images``: uint8 (N, rows, cols) or (N, rows, cols, 1)."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape[:3]
    return struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes()


def encode_idx_labels(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes()


def _load_mnist_split(directory: Path, split: str) -> Dataset:
    img_name, lbl_name = MNIST_FILES[split]
    try:
        x = parse_idx_images(_read_maybe_gz(directory / img_name))
    except FormatError as e:
        raise FormatError(f"{img_name}: {e}") from None
    try:
        y = parse_idx_labels(_read_maybe_gz(directory / lbl_name))
    except FormatError as e:
        raise FormatError(f"{lbl_name}: {e}") from None
    if len(x) != len(y):
        raise FormatError(f"{split}: {len(x)} images but {len(y)} labels")
    if y.size and y.max() > 9:
        raise FormatError(f"{lbl_name}: label {y.max()} out of range")
    return Dataset(x, y, name=f"mnist-{split}")


def load_mnist(directory) -> tuple[Dataset, Dataset]:
    directory = Path(directory)
    return _load_mnist_split(directory, "train"), _load_mnist_split(directory, "test")


def write_mnist(directory, train: tuple, test: tuple, compress: bool = False):
    """Write (images uint8, labels) pairs as the four canonical IDX files."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for split, (images, labels) in (("train", train), ("test", test)):
        img_name, lbl_name = MNIST_FILES[split]
        for name, payload in ((img_name, encode_idx_images(images)), (lbl_name, encode_idx_labels(labels))):
            if compress:
                atomic_write(directory / (name + ".gz"), gzip.compress(payload, mtime=0))
            else:
                atomic_write(directory / name, payload)


# -- CIFAR-10 binary -----------------------------------------------------------

CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]


def parse_cifar_batch(buf: bytes, name: str = "batch") -> tuple[np.ndarray, np.ndarray]:
    if len(buf) % CIFAR_RECORD:
        whole = len(buf) // CIFAR_RECORD * CIFAR_RECORD
        raise FormatError(f"{name}: length {len(buf)} is not a multiple of {CIFAR_RECORD}", offset=whole)
    rec = np.frombuffer(buf, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise FormatError(f"{name}: label byte {labels[bad[0]]} > 9", offset=int(bad[0]) * CIFAR_RECORD)
    # planes are R, G, B, each 32x32 row-major
    images = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return images.astype(np.float32) / np.float32(255.0), labels


def encode_cifar_batch(images: np.ndarray, labels) -> bytes:
    """``images``: uint8 (N, 32, 32, 3)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    planes = images.transpose(0, 3, 1, 2).reshape(len(images), -1)
    return np.concatenate([labels[:, None], planes], axis=1).tobytes()


def _load_cifar_files(directory: Path, names, split) -> Dataset:
    xs, ys = [], []
    for name in names:
        path = directory / name
        if not path.exists():
            raise FileNotFoundError(f"missing CIFAR-10 batch {path}")
        x, y = parse_cifar_batch(path.read_bytes(), name)
        xs.append(x)
        ys.append(y)
    return Dataset(np.concatenate(xs), np.concatenate(ys), name=f"cifar10-{split}")


def load_cifar10(directory) -> tuple[Dataset, Dataset]:
    directory = Path(directory)
    if (directory / "cifar-10-batches-bin").is_dir():
        directory = directory / "cifar-10-batches-bin"
    return (_load_cifar_files(directory, CIFAR_TRAIN_FILES, "train"),
            _load_cifar_files(directory, CIFAR_TEST_FILES, "test"))


# -- synthetic -------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticParams:
    classes: int = 10
    height: int = 28
    width: int = 28
    channels: int = 1
    train_per_class: int = 100
    test_per_class: int = 50
    blobs: int = 3
    noise: float = 0.15
    seed: int = 0


def gen_synthetic(p: SyntheticParams = SyntheticParams()) -> tuple[Dataset, Dataset]:
    """Class-conditional blob images.

    Each class owns a prototype made of a few Gaussian blobs; samples jitter
    the prototype's position and brightness and add pixel noise.
    """
    if p.classes < 2:
        raise DomainError("synthetic data needs at least 2 classes")
    rng = np.random.default_rng(p.seed)
    yy, xx = np.mgrid[0:p.height, 0:p.width].astype(np.float32)
    centres = rng.uniform(0.2, 0.8, size=(p.classes, p.blobs, 2)) * (p.height, p.width)
    sigma = rng.uniform(0.08, 0.15, size=(p.classes, p.blobs)) * min(p.height, p.width)
    colour = rng.uniform(0.3, 1.0, size=(p.classes, p.blobs, p.channels))

    def draw(per_class):
        n = per_class * p.classes
        labels = np.repeat(np.arange(p.classes), per_class)
        shift = rng.normal(0, 1.0, size=(n, 1, 2))
        gain = rng.uniform(0.7, 1.0, size=(n, 1, 1))
        c = centres[labels] + shift
        d2 = (yy[None, None] - c[..., 0, None, None]) ** 2 + (xx[None, None] - c[..., 1, None, None]) ** 2
        g = np.exp(-d2 / (2 * sigma[labels][..., None, None] ** 2))  # (n, blobs, H, W)
        img = np.einsum("nbhw,nbc->nhwc", g, colour[labels]) * gain[..., None]
        img += rng.normal(0, p.noise, size=img.shape)
        order = rng.permutation(n)
        return np.clip(img, 0, 1).astype(np.float32)[order], labels[order]

    train = Dataset(*draw(p.train_per_class), name="synthetic-train", num_classes=p.classes)
    test = Dataset(*draw(p.test_per_class), name="synthetic-test", num_classes=p.classes)
    return train, test


# -- descriptors -----------------------------------------------------------------

def parse_synthetic_spec(text: str) -> SyntheticParams:
    """``synthetic:classes=2,train_per_class=500,seed=1`` -> :class:`SyntheticParams`."""
    _, _, opts = text.partition(":")
    kwargs = {}
    for item in filter(None, (s.strip() for s in opts.split(","))):
        key, sep, value = item.partition("=")
        if not sep or key not in SyntheticParams.__dataclass_fields__:
            raise ConfigError(f"bad synthetic option {item!r}")
        kwargs[key] = float(value) if key == "noise" else int(value)
    return SyntheticParams(**kwargs)


def load_dataset(descriptor: str) -> tuple[Dataset, Dataset]:
    """Load by descriptor: a directory (MNIST IDX or CIFAR-10 binary, detected
    from file names) or ``synthetic:key=value,...``."""
    if descriptor.startswith("synthetic"):
        return gen_synthetic(parse_synthetic_spec(descriptor))
    path = Path(descriptor)
    if not path.is_dir():
        raise FileNotFoundError(f"dataset directory {descriptor} not found")
    names = set(os.listdir(path))
    if {"train-images-idx3-ubyte", "train-images-idx3-ubyte.gz"} & names:
        return load_mnist(path)
    if "test_batch.bin" in names or "cifar-10-batches-bin" in names:
        return load_cifar10(path)
    raise FormatError(f"{descriptor}: no MNIST IDX or CIFAR-10 binary files found")


def atomic_write(path, data: bytes):
    """Write to a temporary sibling then rename over ``path``."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


# -- bundled real-digit subset ------------------------------------------------------

def bundled_mnist_csv() -> Path:
    """Locate the 5000-digit MNIST sample shipped inside the ``mlxtend`` wheel.

    Only the data file is used; mlxtend itself is never imported.
    """
    import importlib.util

    spec = importlib.util.find_spec("mlxtend")
    if spec is None or not spec.submodule_search_locations:
        raise FileNotFoundError("mlxtend is not installed; it carries the bundled MNIST sample")
    path = Path(list(spec.submodule_search_locations)[0]) / "data" / "data" / "mnist_5k.csv.gz"
    if not path.exists():
        raise FileNotFoundError(f"bundled MNIST sample missing at {path}")
    return path


def write_mnist_subset(directory, n_train: int = 4000, seed: int = 0, source=None) -> Path:
    """Convert the bundled 5000-digit sample into IDX files (shuffled train/test split)."""
    source = Path(source) if source else bundled_mnist_csv()
    with gzip.open(source, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.uint8)
    pixels, labels = table[:, :-1].reshape(-1, 28, 28), table[:, -1]
    if not 0 < n_train < len(labels):
        raise DomainError(f"n_train must be in (0, {len(labels)})")
    order = np.random.default_rng(seed).permutation(len(labels))
    tr, te = order[:n_train], order[n_train:]
    write_mnist(directory, (pixels[tr], labels[tr]), (pixels[te], labels[te]))
    return Path(directory)
