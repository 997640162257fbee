import numpy as np
import pytest
from hypothesis import settings

from voxelgan.grids import LevelGrid

settings.register_profile("suite", max_examples=50, deadline=None, derandomize=True)
settings.load_profile("suite")

TOKEN_NAMES = ("air", "stone", "grass", "dirt", "water", "sand", "log", "leaves")


def random_grid(rng: np.random.Generator, shape=None, num_tokens=None) -> LevelGrid:
    if shape is None:
        shape = tuple(rng.integers(1, 6, size=3))
    if num_tokens is None:
        num_tokens = int(rng.integers(2, len(TOKEN_NAMES) + 1))
    voxels = rng.integers(0, num_tokens, size=shape)
    return LevelGrid(voxels, TOKEN_NAMES[:num_tokens])


def stripe_grid(size: int = 12, period: int = 4) -> LevelGrid:
    """Two-token pattern striped along the depth axis."""
    d = np.arange(size)
    voxels = np.broadcast_to(((d // (period // 2)) % 2)[:, None, None],
                             (size, size, size))
    return LevelGrid(voxels.copy(), ("air", "stone"))


@pytest.fixture
def tiny_grid() -> LevelGrid:
    return LevelGrid.from_flat((2, 2, 2), [0, 0, 0, 0, 1, 1, 1, 1], ["air", "stone"])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
