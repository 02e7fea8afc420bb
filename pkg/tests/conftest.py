import os

import numpy as np
import pytest

os.environ.setdefault("LIV_LOG", "quiet")


@pytest.fixture
def rng():
    from dpmliv.rand_kernel import Rng

    return Rng(12345, 0)


@pytest.fixture
def tiny_dataset():
    """Deterministic 8-unit dataset small enough for hand calculations."""
    from dpmliv.data_model import Dataset

    gen = np.random.default_rng(7)
    n = 8
    x = np.round(gen.standard_normal((n, 2)), 3)
    z = np.array([0, 1, 0, 1, 0, 1, 0, 1], dtype=float)
    d = np.array([0, 1, 0, 1, 1, 0, 0, 1])
    y = np.round(10 + x @ np.array([1.0, -2.0]) + 5 * d
                 + gen.standard_normal(n), 3)
    return Dataset(y=y, d=d, z=z, x=x, column_names=("x1", "x2"))
