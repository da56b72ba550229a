import os

import numpy as np
import pytest
import torch
from hypothesis import settings

from minivlm.configs import TransformerConfig, get_preset
from minivlm.detector.regions import RegionSet

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# small enough for finite differences; a wide init keeps attention gradients well above round-off
GRAD_CFG = TransformerConfig(name="grad", num_layers=2, hidden_size=8, intermediate_size=16, num_heads=2,
                             vocab_size=20, max_positions=16, region_feature_dim=4, dropout=0.0, init_std=0.5)


@pytest.fixture
def toy_cfg():
    return get_preset("toy")


def make_regions(n, dim, seed=0, size=(100, 80), image_id="img"):
    rng = np.random.default_rng(seed)
    w, h = size
    x1 = rng.uniform(0, w * 0.6, n)
    y1 = rng.uniform(0, h * 0.6, n)
    x2 = np.minimum(x1 + rng.uniform(2, w * 0.4, n), w)
    y2 = np.minimum(y1 + rng.uniform(2, h * 0.4, n), h)
    return RegionSet(image_id, size, np.c_[x1, y1, x2, y2], np.sort(rng.uniform(0.1, 1, n))[::-1],
                     rng.integers(0, 10, n), [f"t{i}" for i in rng.integers(0, 10, n)],
                     rng.normal(size=(n, dim)))


@pytest.fixture
def regions_factory():
    return make_regions


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
