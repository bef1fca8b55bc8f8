"""Model roster: MNIST convnets and CIFAR-10 ResNets / convnet."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from .errors import RosterError
from .nn import LayerSpec, Model
from .quant import QuantConfig

MNIST_SHAPE = (28, 28, 1)
CIFAR_SHAPE = (32, 32, 3)


def mnist_convnet(width: int = 16, hidden: int = 512, classes: int = 10) -> list:
    """8-layer convnet: conv, pool, conv, conv, pool, conv, dense, dense."""
    conv = lambda: LayerSpec("conv2d", channels=width, kernel=3, padding="same")  # noqa: E731
    relu = LayerSpec("relu")
    pool = LayerSpec("maxpool", kernel=2, stride=2, padding="valid")
    return [
        conv(), relu, pool,
        conv(), relu,
        conv(), relu, pool,
        conv(), relu,
        LayerSpec("flatten"),
        LayerSpec("dense", units=hidden), relu,
        LayerSpec("dense", units=classes),
    ]


def cifar_resnet(depth: int, base: int = 16, classes: int = 10) -> list:
    """ResNet-``depth`` for 32x32 inputs (``depth = 6n + 2``)."""
    if (depth - 2) % 6:
        raise RosterError(f"ResNet depth must be 6n+2, got {depth}")
    n = (depth - 2) // 6
    specs = [LayerSpec("conv2d", channels=base, kernel=3, padding=1, bias=False),
             LayerSpec("batchnorm"), LayerSpec("relu")]
    for stage, mult in enumerate((1, 2, 4)):
        for block in range(n):
            stride = 2 if stage > 0 and block == 0 else 1
            specs.append(LayerSpec("residual-block", channels=base * mult, stride=stride))
    specs += [LayerSpec("avgpool"), LayerSpec("dense", units=classes)]
    return specs


def cifar_convnet(classes: int = 10) -> list:
    """11-layer convnet: six convs, two pools, three dense layers."""
    def conv(c, pad="same"):
        return [LayerSpec("conv2d", channels=c, kernel=3, padding=pad, bias=False),
                LayerSpec("batchnorm"), LayerSpec("relu")]
    pool = LayerSpec("maxpool", kernel=3, stride=2, padding="same")
    return [
        *conv(64), *conv(64), pool,
        *conv(128), *conv(128), pool,
        *conv(128, "valid"), *conv(128, "valid"),
        LayerSpec("flatten"),
        LayerSpec("dense", units=1536), LayerSpec("relu"),
        LayerSpec("dense", units=512), LayerSpec("relu"),
        LayerSpec("dense", units=classes),
    ]


@dataclass(frozen=True)
class RosterEntry:
    model_id: str
    dataset: str
    input_shape: tuple
    channel_multiplier: int
    expected_params: int
    specs: Callable[[], list]


ROSTER = {
    e.model_id: e
    for e in [
        RosterEntry("MnistA", "mnist", MNIST_SHAPE, 1, 414_000, lambda: mnist_convnet(16)),
        RosterEntry("MnistB", "mnist", MNIST_SHAPE, 2, 836_000, lambda: mnist_convnet(32)),
        RosterEntry("MnistC", "mnist", MNIST_SHAPE, 4, 1_700_000, lambda: mnist_convnet(64)),
        RosterEntry("Resnet20", "cifar10", CIFAR_SHAPE, 1, 269_000, lambda: cifar_resnet(20)),
        RosterEntry("Resnet32", "cifar10", CIFAR_SHAPE, 1, 464_000, lambda: cifar_resnet(32)),
        RosterEntry("Resnet44", "cifar10", CIFAR_SHAPE, 1, 658_000, lambda: cifar_resnet(44)),
        RosterEntry("CifarA", "cifar10", CIFAR_SHAPE, 1, 4_500_000, cifar_convnet),
    ]
}


def get_entry(entry) -> RosterEntry:
    if isinstance(entry, RosterEntry):
        return entry
    try:
        return ROSTER[entry]
    except KeyError:
        raise RosterError(f"unknown model id {entry!r}; known: {', '.join(ROSTER)}") from None


def build_model(entry, quant: QuantConfig | None = None, seed: int = 0) -> Model:
    e = get_entry(entry)
    return Model(e.specs(), e.input_shape, quant=quant or QuantConfig(),
                 model_id=e.model_id, dataset_id=e.dataset, seed=seed)
