import sys
from pathlib import Path

import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from xmask_attack import toy_encoder  # noqa: E402


@pytest.fixture(scope="session")
def enc():
    return toy_encoder(seed=0, feature_dim=16, patch_size=4)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)
