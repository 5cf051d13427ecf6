import numpy as np
import pytest

from stopvid import numcore as nc
from stopvid.encoders import FrozenClipModel, ModelConfig


@pytest.fixture(autouse=True)
def _clean_tape():
    nc.current_tape().clear()
    nc.tensor.CHECK_FINITE = True
    yield
    nc.tensor.CHECK_FINITE = False
    nc.current_tape().clear()


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(d_v=8, d=4, L_v=1, L_t=1, n_heads=2, g=2, h=2, w=2, N_F=3,
                       vocab_size=64, max_text_len=16, seed=3)


@pytest.fixture(scope="session")
def tiny_model(tiny_config):
    return FrozenClipModel.from_seed(tiny_config)


@pytest.fixture(scope="session")
def toy_config():
    return ModelConfig()


@pytest.fixture(scope="session")
def toy_model(toy_config):
    return FrozenClipModel.from_seed(toy_config)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
