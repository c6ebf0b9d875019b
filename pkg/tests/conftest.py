import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from amr.spatial import CircleAverageTable

settings.register_profile(
    "default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_table(rng, n, n_dist=3, missing_rate=0.0):
    mu = rng.normal(size=(n, n_dist))
    missing = rng.random((n, n_dist)) < missing_rate
    mu[missing] = np.nan
    counts = np.where(missing, 0, rng.integers(1, 20, size=(n, n_dist)))
    return CircleAverageTable(mu, counts, missing, np.arange(n_dist, dtype=float), 0)


def random_z(rng, n, min_arm=2):
    while True:
        z = (rng.random(n) < 0.5).astype(np.int8)
        if min_arm <= z.sum() <= n - min_arm:
            return z


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
