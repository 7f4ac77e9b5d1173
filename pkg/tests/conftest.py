import numpy as np
import pytest

from tools.sparse_kernels import CsrMatrix


def random_sparse_dense(rng: np.random.Generator, n: int, density: float = 0.3) -> np.ndarray:
    """Diagonally dominant dense array with a random sparsity pattern."""
    dense = rng.uniform(-1.0, 1.0, size=(n, n)) * (rng.random((n, n)) < density)
    np.fill_diagonal(dense, n + rng.uniform(1.0, 2.0, size=n))
    return dense


def rotation_2x2() -> np.ndarray:
    c = s = np.sqrt(0.5)
    return np.array([[c, -s], [s, c]])


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def small_system(rng):
    dense = random_sparse_dense(rng, 20)
    return CsrMatrix.from_dense(dense), rng.uniform(-1.0, 1.0, size=20), dense
