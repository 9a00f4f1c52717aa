import numpy as np
import pytest

from nnbm.model import NnbmModel, Topology, build_square_grid


def complete_edges(n):
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def random_model(rng, n, low=-0.3, high=0.8, b=(-0.5, 0.5), w_diag=1.0, edges=None):
    edges = complete_edges(n) if edges is None else edges
    return NnbmModel(
        Topology(n, edges),
        rng.uniform(*b, size=n),
        np.full(n, w_diag),
        rng.uniform(low, high, size=len(edges)),
    )


def pair_model(b=0.5, w_diag=1.0, w12=0.3):
    return NnbmModel(Topology(2, [(0, 1)]), np.full(2, b), np.full(2, w_diag), np.array([w12]))


@pytest.fixture
def golden_pair():
    return pair_model()


@pytest.fixture(scope="session")
def grid_model():
    return build_square_grid(6, 6, -0.4, 0.4, 1.0, 0.8, 7)
