import numpy as np
import pytest
import torch


@pytest.fixture(autouse=True, scope="session")
def single_thread():
    """All reproducibility contracts assume one compute thread."""
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(20240612)
