import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from coxconcord.data import Dataset  # noqa: E402


def random_dataset(rng, n=60, d=3, n_strata=1, censor_frac=0.3, ties=False, beta=None):
    X = rng.normal(size=(n, d))
    beta = np.zeros(d) if beta is None else np.asarray(beta)
    t = rng.exponential(size=n) / np.exp(X @ beta)
    if ties:
        t = np.ceil(t * 4) / 4
    e = (rng.random(n) >= censor_frac).astype(int)
    s = rng.integers(1, n_strata + 1, size=n)
    return Dataset.from_arrays(X, t, e, s)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_cox():
    """n=500, d=5 censored fixture with moderate signal."""
    g = np.random.default_rng(1)
    X = g.normal(size=(500, 5))
    b = np.array([1.0, -0.5, 0.0, 0.0, 0.3])
    T = -np.log(g.uniform(size=500)) / np.exp(X @ b)
    C = g.exponential(2.0, size=500)
    return Dataset.from_arrays(X, np.minimum(T, C), (T <= C).astype(int))
