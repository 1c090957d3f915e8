import numpy as np
import pytest

from fringefinder import nn, synthgen

# small-geometry settings shared by the fast pipeline/service tests
SMALL_PATCH = 64
SMALL_SIDE = 16

SMALL_LAYERS = (
    ("conv", 6, 3),
    ("relu",),
    ("maxpool", 2),
    ("conv", 12, 3),
    ("relu",),
    ("maxpool", 2),
    ("flatten",),
    ("dense", 24),
    ("relu",),
    ("dense", 2),
    ("softmax",),
)


def small_model_config(seed=0) -> nn.ModelConfig:
    return nn.ModelConfig(input_side=SMALL_SIDE, channels_in=2, layers=SMALL_LAYERS, seed=seed)


def small_hyper(epochs=8, seed=0) -> nn.Hyper:
    return nn.Hyper(learning_rate=0.02, epochs=epochs, batch_size=16, seed=seed)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """120-sample 64-px dataset, reused across the fast tests."""
    out = tmp_path_factory.mktemp("smallds")
    manifest = synthgen.build_dataset(out, count=120, positive_fraction=0.5,
                                      size=SMALL_PATCH, master_seed=11)
    return manifest


@pytest.fixture(scope="session")
def small_trained_model(tmp_path_factory, small_dataset):
    """A quick CNN trained on the small dataset plus its saved file path."""
    records = synthgen.load_manifest(small_dataset)
    model, history = nn.train(small_model_config(), small_hyper(), records)
    path = tmp_path_factory.mktemp("model") / "small.mnv1"
    nn.save_model(model, path)
    return model, path


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
