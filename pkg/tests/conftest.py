import numpy as np
import pytest

from sketchcache import harness


@pytest.fixture(scope="session")
def zipf_100k():
    """Shared heavy-tailed token stream: (timestamps, tokens)."""
    tokens = harness.gen_zipf(100_000, seed=7)
    return harness.timestamps(100_000), tokens


@pytest.fixture(scope="session")
def normal_values_50k():
    rng = np.random.default_rng(11)
    return harness.timestamps(50_000), rng.normal(250.0, 40.0, size=50_000)
