import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from helpers import make_synthetic_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    """Session-wide 8-image synthetic dataset at 96 px."""
    return make_synthetic_dataset(tmp_path_factory.mktemp("data") / "cod", n=8, size=96, seed=0)
