import numpy as np
import pytest

from bsnn import data as data_mod
from bsnn.network import build_network, make_network_config


@pytest.fixture
def rng():
    return np.random.default_rng(7)


@pytest.fixture
def tiny_dataset():
    return data_mod.synthetic_blobs(
        n_classes=3, per_class=8, channels=1, height=6, width=6, noise=0.1, seed=11
    )


def make_tiny_net(variant, seed=0, **kw):
    defaults = dict(
        input_shape=(1, 4, 4),
        n_classes=3,
        timesteps=2,
        blocks=1,
        channels=2,
        kernel=3,
        pool=2,
        seed=seed,
    )
    defaults.update(kw)
    return build_network(make_network_config(variant, **defaults))
