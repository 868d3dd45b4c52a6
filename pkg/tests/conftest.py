"""Pytest configuration and fixtures for deepfrc tests."""

import numpy as np
import pytest

from deepfrc.data.synthgen import SynthConfig, generate
from deepfrc.model.basis_registry import BasisRegistry
from deepfrc.model.pipeline import DeepFRC


@pytest.fixture(autouse=True)
def reset_singletons():
    """Reset the basis registry singleton between tests."""
    BasisRegistry._instance = None
    BasisRegistry._registry.clear()
    yield
    BasisRegistry._instance = None
    BasisRegistry._registry.clear()


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def micro():
    """The eight-curve synthetic dataset and its ground truth."""
    return generate(SynthConfig.from_preset("micro"))


@pytest.fixture
def micro_dataset(micro):
    return micro[0]


@pytest.fixture
def micro_model(micro_dataset):
    """A small untrained model fitted to the micro dataset's grid."""
    model = DeepFRC(micro_dataset.grid, 1, micro_dataset.n_classes, K=8, rng=np.random.default_rng(0))
    model.fit_standardizer(micro_dataset)
    return model

