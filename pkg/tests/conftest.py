"""Session fixtures for the desk-scale pipeline: generated once, shared by every test."""

import os
import time

import pytest

from softclik import dataset, trainer
from softclik.core import FIBER_BOX
from softclik.neuralop import OperatorNet
from softclik.rod_model import RodParams

DESK_N = 20_000
DESK_EPOCHS = 100
SEED = 2024


@pytest.fixture(scope="session")
def desk_data():
    t0 = time.perf_counter()
    workers = int(os.environ.get("SOFTCLIK_THREADS", os.cpu_count() or 1))
    ds = dataset.generate(RodParams(), FIBER_BOX, N=DESK_N, n_s=100, seed=SEED, workers=workers)
    ds.meta["fixture_seconds"] = time.perf_counter() - t0
    return ds


@pytest.fixture(scope="session")
def desk_splits(desk_data):
    return dataset.split(desk_data, seed=SEED)


@pytest.fixture(scope="session")
def desk_model(desk_splits):
    """Default architecture trained for the desk budget; returns (net, history, seconds)."""
    train_set, val_set, _ = desk_splits
    t0 = time.perf_counter()
    net = OperatorNet.create(seed=SEED)
    cfg = trainer.TrainConfig(epochs=DESK_EPOCHS, seed=SEED)
    best, hist = trainer.train(net, train_set, val_set, cfg)
    return best, hist, time.perf_counter() - t0


def pytest_collection_modifyitems(items):
    for item in items:
        if {"desk_data", "desk_splits", "desk_model"} & set(getattr(item, "fixturenames", ())):
            item.add_marker(pytest.mark.slow)
