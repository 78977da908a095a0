import numpy as np
import pytest

from zvl.core import RatingMatrix
from zvl.voting import SynthSpec, generate_synthetic


def random_matrix(rng, n_users, n_items, scale=5, density=0.6):
    """Dense-ish random ratings; every user gets at least one entry."""
    entries = []
    for u in range(n_users):
        items = [i for i in range(n_items) if rng.random() < density] or [int(rng.integers(n_items))]
        entries += [(u, i, int(rng.integers(1, scale + 1))) for i in items]
    return RatingMatrix.from_entries(entries, n_users, n_items, scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def zipf_50():
    return generate_synthetic(SynthSpec(50, 50, 5, 0.3, 0.5, seed=2))
