"""Quantization-aware training: optimizers, recipes, the epoch loop."""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .data import Dataset, atomic_write
from .errors import ConfigError, DomainError, ShapeError, TrainingError
from .nn import Model, backward, forward, predict
from .nn.functional import cross_entropy

BATCH_SIZE = 128


@dataclass(frozen=True)
class OptimizerSpec:
    """Adam or momentum SGD plus an L2 penalty ``weight_decay * ||W||^2``.

    ``lr_schedule`` is a tuple of ``(epoch, value)`` pairs (epochs counted from
    1); the learning rate of an epoch is the value of the last pair whose epoch
    is not after it. An empty schedule means the constant ``lr``.
    ``decay_scope`` is ``"fc"`` (dense weights only) or ``"all"`` (every
    conv and dense weight). Biases and batchnorm parameters are never decayed.
    """

    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gamma: float = 0.9
    lr_schedule: tuple = ()
    weight_decay: float = 0.0
    decay_scope: str = "fc"

    def __post_init__(self):
        if self.kind not in ("adam", "momentum"):
            raise ConfigError(f"unknown optimizer {self.kind!r}")
        if self.decay_scope not in ("fc", "all"):
            raise ConfigError(f"decay_scope must be 'fc' or 'all', got {self.decay_scope!r}")
        epochs = [int(e) for e, _ in self.lr_schedule]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ConfigError("lr schedule epochs must be strictly increasing")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be non-negative")

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for e, value in self.lr_schedule:
            if epoch >= e:
                lr = value
        return float(lr)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = BATCH_SIZE
    seed: int = 0
    dataset_id: str = "mnist"
    pad_crop: int = 0
    hflip: bool = False
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"]["lr_schedule"] = [list(p) for p in self.optimizer.lr_schedule]
        return d


def mnist_recipe(epochs: int = 30, seed: int = 0) -> TrainConfig:
    return TrainConfig(epochs=epochs, seed=seed, dataset_id="mnist",
                       optimizer=OptimizerSpec("adam", lr=1e-3, weight_decay=1e-5, decay_scope="fc"))


def cifar_recipe(epochs: int = 90, seed: int = 0) -> TrainConfig:
    schedule = ((1, 0.1), (32, 0.01), (48, 0.001), (72, 0.0002), (82, 0.00002))
    return TrainConfig(epochs=epochs, seed=seed, dataset_id="cifar10", pad_crop=4, hflip=True,
                       optimizer=OptimizerSpec("momentum", lr=0.1, gamma=0.9, lr_schedule=schedule,
                                               weight_decay=2e-4, decay_scope="all"))


def recipe_for(dataset_id: str, epochs: int | None = None, seed: int = 0) -> TrainConfig:
    if dataset_id.startswith("cifar"):
        cfg = cifar_recipe(seed=seed)
    else:
        cfg = mnist_recipe(seed=seed)
    if epochs is not None:
        cfg = replace(cfg, epochs=epochs)
    return cfg


class Optimizer:
    def __init__(self, spec: OptimizerSpec, params: dict):
        self.spec = spec
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()} if spec.kind == "adam" else None

    def step(self, params: dict, grads: dict, lr: float):
        s = self.spec
        self.t += 1
        if s.kind == "adam":
            c1 = 1 - s.beta1 ** self.t
            c2 = 1 - s.beta2 ** self.t
            for k, g in grads.items():
                m, v = self.m[k], self.v[k]
                m *= s.beta1
                m += (1 - s.beta1) * g
                v *= s.beta2
                v += (1 - s.beta2) * g * g
                params[k] -= (lr * (m / c1) / (np.sqrt(v / c2) + s.eps)).astype(params[k].dtype)
        else:
            for k, g in grads.items():
                m = self.m[k]
                m *= s.gamma
                m += g
                params[k] -= (lr * m).astype(params[k].dtype)


def decayed_weights(model: Model, scope: str) -> list:
    names = []
    for layer in model.layers:
        for name in layer.weight_names():
            if scope == "all" or layer.kind == "dense":
                names.append(name)
    return names


def augment(x: np.ndarray, rng, pad: int, hflip: bool) -> np.ndarray:
    """Random pad-and-crop plus horizontal flip, per sample."""
    if pad:
        b, h, w, _ = x.shape
        xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
        oy = rng.integers(0, 2 * pad + 1, size=b)
        ox = rng.integers(0, 2 * pad + 1, size=b)
        x = np.stack([xp[i, oy[i]:oy[i] + h, ox[i]:ox[i] + w] for i in range(b)])
    if hflip:
        flip = rng.random(len(x)) < 0.5
        x = x.copy()
        x[flip] = x[flip, :, ::-1]
    return x


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float
    lr: float
    seconds: float


def _as_xy(data):
    if isinstance(data, Dataset):
        return data.x, data.y
    x, y = data
    return np.asarray(x), np.asarray(y)


def evaluate_accuracy(model: Model, data, batch_size: int = 512) -> float:
    """Fraction of samples whose predicted class equals the label."""
    x, y = _as_xy(data)
    if len(y) == 0:
        raise DomainError("cannot evaluate accuracy on an empty dataset")
    return float(np.mean(predict(model, x, batch_size) == y))


def train(model: Model, cfg: TrainConfig, train_data, test_data=None, log=None):
    """Train ``model`` in place. Returns ``(model, history)``.

    The forward pass uses quantized weights and activations when the model's
    QuantConfig asks for them; updates land on the full-precision shadow
    parameters.
    """
    x, y = _as_xy(train_data)
    if x.shape[1:] != model.input_shape:
        raise ShapeError(f"training data shape {x.shape[1:]} != model input {model.input_shape}")
    if len(y) == 0:
        raise DomainError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    opt = Optimizer(cfg.optimizer, model.params)
    decay = decayed_weights(model, cfg.optimizer.decay_scope)
    lam = cfg.optimizer.weight_decay
    history = []
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        lr = cfg.optimizer.lr_at(epoch)
        order = rng.permutation(len(y))
        total_loss, correct = 0.0, 0
        for i in range(0, len(y), cfg.batch_size):
            rows = order[i:i + cfg.batch_size]
            xb = x[rows]
            if cfg.pad_crop or cfg.hflip:
                xb = augment(xb, rng, cfg.pad_crop, cfg.hflip)
            probs, _, trace = forward(model, xb, train=True)
            loss = cross_entropy(probs, y[rows])
            if lam:
                loss += lam * sum(float(np.sum(model.params[k].astype(np.float64) ** 2)) for k in decay)
            if not math.isfinite(loss):
                raise TrainingError(epoch, f"loss became {loss} at step {i // cfg.batch_size}")
            grads, _ = backward(model, trace, y[rows])
            for k in decay:
                grads[k] = grads[k] + (2 * lam) * model.params[k]
            opt.step(model.params, grads, lr)
            model.touch()
            total_loss += loss * len(rows)
            correct += int(np.sum(np.argmax(probs, axis=1) == y[rows]))
        rec = EpochRecord(epoch, total_loss / len(y), correct / len(y),
                          evaluate_accuracy(model, test_data) if test_data is not None else float("nan"),
                          lr, time.perf_counter() - start)
        history.append(rec)
        if log:
            log(f"{model.label} epoch {epoch}: loss {rec.loss:.4f} train {rec.train_acc:.4f} "
                f"test {rec.test_acc:.4f} ({rec.seconds:.1f}s)")
    return model, history


def history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["epoch", "train_acc", "test_acc"])
    for r in history:
        w.writerow([r.epoch, f"{r.train_acc:.4f}", f"{r.test_acc:.4f}"])
    return buf.getvalue()


def write_history(path, history):
    atomic_write(path, history_csv(history).encode("utf-8"))
