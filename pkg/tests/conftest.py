import numpy as np
import pytest

from chainocrs import (
    GraphicMatroid,
    LaminarMatroid,
    PartitionMatroid,
    UniformMatroid,
    random_explicit_matroid,
)


@pytest.fixture
def u12():
    return UniformMatroid(1, 2)


@pytest.fixture
def u24():
    return UniformMatroid(2, 4)


@pytest.fixture
def u39():
    return UniformMatroid(3, 9)


@pytest.fixture
def k3():
    return GraphicMatroid(3, [(0, 1), (1, 2), (2, 0)])


@pytest.fixture
def k4():
    # edges 0..2 form a spanning star at vertex 0
    return GraphicMatroid(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])


def small_corpus() -> list:
    """Structured matroids with n <= 8, one per family."""
    return [
        UniformMatroid(1, 2),
        UniformMatroid(2, 4),
        UniformMatroid(3, 8),
        PartitionMatroid([[0, 1, 2], [3, 4]], [2, 1]),
        GraphicMatroid(3, [(0, 1), (1, 2), (2, 0)]),
        GraphicMatroid(4, [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]),
        LaminarMatroid(6, [[0, 1, 2, 3, 4, 5], [0, 1, 2], [0, 1]], [4, 2, 1]),
    ]


def explicit_corpus(count: int = 20, seed: int = 20240) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(3, 8))
        out.append(random_explicit_matroid(rng, n))
    return out
