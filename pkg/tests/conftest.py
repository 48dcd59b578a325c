import numpy as np
import pytest

from kan_compact import device
from kan_compact.networks import Checkpoint, NetworkSpec, init_params


@pytest.fixture(scope="session")
def dataset10():
    return device.generate_dataset(10)


@pytest.fixture(scope="session")
def dataset50():
    """Coarsest split: 289 train points on a 17 x 17 sub-grid."""
    return device.generate_dataset(50)


@pytest.fixture(scope="session")
def dataset5():
    return device.generate_dataset(5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def _make_checkpoint(widths, grids=None, seed=0, target="Q_S", kind="KAN", **metadata):
    """Randomly initialised checkpoint for tests that need a network but no training."""
    grids = grids if grids is not None else (5,) * (len(widths) - 1)
    spec = NetworkSpec(
        kind,
        widths,
        grids=grids if kind != "MLP" else (),
        conversion="exp-current" if target == "I_D" else "charge-scale",
    )
    params = init_params(spec, np.random.default_rng(seed))
    meta = {"target": target, "seed": seed, **metadata}
    return Checkpoint(spec, params, {}, meta)


@pytest.fixture
def make_checkpoint():
    return _make_checkpoint

