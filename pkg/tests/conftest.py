"""Shared fixtures for the desk-scale acceptance experiments.

The trained surrogate and its dataset take minutes to build, so they are
produced once per session and cached on disk keyed by their full
configuration; deleting tests/_cache forces a clean rebuild.
"""

import hashlib
import os

import numpy as np
import pytest

from bayestomo import datagen, problems, surrogate

CACHE_DIR = os.path.join(os.path.dirname(__file__), "_cache")

DESK_REFINEMENT = 4
DESK_DATASET = 880
DESK_SEED = 1
DESK_TRAIN = dict(epochs=500, minibatch=16, lr=1e-3, lr_drop_factor=0.3,
                  lr_drop_period=400, seed=0)


def _cache_path(tag: str, key: str) -> str:
    os.makedirs(CACHE_DIR, exist_ok=True)
    digest = hashlib.sha256(key.encode()).hexdigest()[:16]
    return os.path.join(CACHE_DIR, f"{tag}_{digest}.bin")


@pytest.fixture(scope="session")
def eit_desk():
    return problems.build_problem("eit", refinement=DESK_REFINEMENT)


@pytest.fixture(scope="session")
def eit_desk_dataset(eit_desk):
    key = f"eit r{DESK_REFINEMENT} n{DESK_DATASET} seed{DESK_SEED}"
    path = _cache_path("dataset", key)
    if os.path.exists(path):
        return datagen.read_dataset(path)
    ds = datagen.generate_dataset(eit_desk, DESK_DATASET, seed=DESK_SEED)
    datagen.write_dataset(ds, path)
    return ds


@pytest.fixture(scope="session")
def eit_desk_net(eit_desk, eit_desk_dataset):
    key = f"eit r{DESK_REFINEMENT} n{DESK_DATASET} seed{DESK_SEED} train{sorted(DESK_TRAIN.items())}"
    path = _cache_path("model", key)
    if os.path.exists(path):
        return surrogate.load_model(path)
    train_ds, _ = datagen.split(eit_desk_dataset, 0.0909, seed=0)
    net = eit_desk.fresh_net(channels=16, rng=np.random.default_rng(0))
    net, _ = surrogate.train(net, train_ds, surrogate.TrainConfig(**DESK_TRAIN))
    surrogate.save_model(net, path)
    return net
