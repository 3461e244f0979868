"""Session-scoped fixtures for artifacts several modules share.

Training the default router takes tens of seconds; building it once keeps the
router-property tests and the acceptance gate from paying twice.
"""

import numpy as np
import pytest

from ddmlab.datagen import DataConfig, build_dataset
from ddmlab.router import RouterTrainConfig, train_router


@pytest.fixture(scope="session")
def toy_dataset():
    """Default data config, 200 items per cluster, data seed 0."""
    return build_dataset(DataConfig(), 200, seed=0)


@pytest.fixture(scope="session")
def trained_router(toy_dataset):
    """Router trained with the default experiment knobs; returns (net, trace)."""
    return train_router(toy_dataset, RouterTrainConfig(steps=1500, batch_size=64, seed=0))


@pytest.fixture(scope="session")
def shuffled_router(toy_dataset):
    """Same config but with permuted training labels; the chance-level control."""
    cfg = RouterTrainConfig(steps=1500, batch_size=64, seed=0, shuffle_labels=True)
    return train_router(toy_dataset, cfg)
