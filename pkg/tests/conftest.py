import numpy as np
import pytest

from tlvar.estimator import TaskStats
from tlvar.var import VarProcess, simulate, spectral_radius


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


def stable_tensor(rng, N, p, radius=0.5):
    """Random transition tensor rescaled to a given companion spectral radius."""
    A = rng.standard_normal((N, N, p)) / np.sqrt(N * p)
    # scaling lag j by c**j scales every companion eigenvalue by c
    c = radius / spectral_radius(A)
    return np.asfortranarray(A * c ** np.arange(1, p + 1))


def random_stats(rng, N, p, T, K=1, radius=0.5):
    out = []
    for k in range(K):
        A = stable_tensor(rng, N, p, radius)
        panel = simulate(VarProcess(A), T, seed=rng.integers(2**32))
        out.append(TaskStats.from_panel(panel))
    return out if K > 1 else out[0]
