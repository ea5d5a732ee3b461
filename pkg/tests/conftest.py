import copy

import pytest

from blackbox_comm.models.schemas import Alphabet, Distribution, DistortionSpec, SeededRng, TransitionKernel


@pytest.fixture
def binary():
    return Alphabet.binary()


@pytest.fixture
def hamming(binary):
    return DistortionSpec.hamming(binary)


@pytest.fixture
def uniform(binary):
    return Distribution.uniform(binary)


@pytest.fixture
def bern():
    """Bernoulli(p) factory."""
    return Distribution.bernoulli


@pytest.fixture
def bsc():
    return TransitionKernel.bsc


@pytest.fixture
def rng():
    return SeededRng(seed=1234)


BASE_CONFIG = {
    "schema_version": 1,
    "seed": 7,
    "alphabets": {"bit": [0, 1]},
    "distributions": {
        "uniform": {"alphabet": "bit", "probs": [0.5, 0.5]},
        "bern03": {"alphabet": "bit", "probs": [0.7, 0.3]},
    },
    "distortions": {"hamming": {"input": "bit", "output": "bit", "matrix": "hamming"}},
    "channels": {
        "bsc02": {"type": "bsc", "crossover": 0.02},
        "bsc3": {"type": "dmc", "input": "bit", "output": "bit", "matrix": [[0.7, 0.3], [0.3, 0.7]]},
    },
}


@pytest.fixture
def make_config():
    """Base config with the given experiment block (deep-copied)."""

    def _make(experiment, **overrides):
        config = copy.deepcopy(BASE_CONFIG)
        config.update(overrides)
        config["experiment"] = experiment
        return config

    return _make
