import numpy as np
import pytest
from hypothesis import settings

from qtransfer.data import SyntheticParams, gen_synthetic
from qtransfer.nn import LayerSpec, Model
from qtransfer.quant import QuantConfig
from qtransfer.train import OptimizerSpec, TrainConfig, train

settings.register_profile("ci", max_examples=40, deadline=None)
settings.load_profile("ci")

SHAPE = (8, 8, 1)


def tiny_specs(width=4, classes=3):
    return [
        LayerSpec("conv2d", channels=width, kernel=3, padding="same"), LayerSpec("relu"),
        LayerSpec("maxpool", kernel=2, stride=2, padding="valid"),
        LayerSpec("flatten"),
        LayerSpec("dense", units=16), LayerSpec("relu"),
        LayerSpec("dense", units=classes),
    ]


def tiny_model(bits=0, seed=0, classes=3, width=4):
    return Model(tiny_specs(width, classes), SHAPE, quant=QuantConfig.uniform(bits),
                 model_id="Tiny", seed=seed)


@pytest.fixture(scope="session")
def blobs():
    """Small 3-class synthetic set on 8x8 images."""
    return gen_synthetic(SyntheticParams(classes=3, height=8, width=8, train_per_class=120,
                                         test_per_class=40, noise=0.08, seed=3))


def fit(bits, data, seed=0, epochs=20):
    cfg = TrainConfig(epochs=epochs, batch_size=32, seed=seed,
                      optimizer=OptimizerSpec(kind="adam", lr=3e-3))
    model = tiny_model(bits, seed=seed)
    train(model, cfg, data[0])
    return model


@pytest.fixture(scope="session")
def trained_tiny(blobs):
    return fit(0, blobs)


@pytest.fixture(scope="session")
def tiny_family(blobs):
    return [fit(b, blobs) for b in (0, 2, 8)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ---------------------------------------------------------------

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
