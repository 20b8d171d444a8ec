import numpy as np
import pytest

from bagaunet import PhantomConfig, generate_dataset


# 10 cases so the default 8:1:1 split keeps every subset nonempty
TINY_PHANTOM = dict(
    n_cases=10,
    shape=(10, 40, 40),
    lesion_count_range=(1, 2),
    lesion_radius_range=(2.0, 3.0),
    seed=3,
)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Small phantom dataset shared across test modules (read-only)."""
    root = tmp_path_factory.mktemp("tiny_ds")
    generate_dataset(PhantomConfig(**TINY_PHANTOM), root)
    return root


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)
