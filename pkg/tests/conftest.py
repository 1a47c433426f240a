import numpy as np
import pytest

from maskcast.data import prepare_splits, synthesize
from maskcast.graph import Graph


@pytest.fixture(scope="session")
def small_dataset():
    return synthesize(12, 400, seed=3)


@pytest.fixture(scope="session")
def small_splits(small_dataset):
    return prepare_splits(small_dataset, 12, 12)


@pytest.fixture
def cycle_graph():
    """Unweighted 4-cycle."""
    return Graph(n_nodes=4, edges=[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (0, 3, 1.0)])


@pytest.fixture
def path_graph():
    """a - b - c path with unit weights."""
    return Graph(n_nodes=3, edges=[(0, 1, 1.0), (1, 2, 1.0)])


def random_graph(n_nodes, n_edges, seed=0):
    """Connected-ish random graph with exactly n_edges edges."""
    rng = np.random.default_rng(seed)
    pairs = [(u, v) for u in range(n_nodes) for v in range(u + 1, n_nodes)]
    picks = rng.choice(len(pairs), size=n_edges, replace=False)
    edges = [(pairs[i][0], pairs[i][1], float(rng.uniform(0.5, 1.5))) for i in picks]
    return Graph(n_nodes=n_nodes, edges=edges)
