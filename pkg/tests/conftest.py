import numpy as np
import pytest

from harmonicgp import DomainGrid, KernelSpec, solve_basis


@pytest.fixture(scope="session")
def square_grid():
    """Unit-square grid small enough for dense eigensolves."""
    return DomainGrid.full_rectangle(24, 24, 1.0)


@pytest.fixture(scope="session")
def square_basis(square_grid):
    return solve_basis(square_grid, 32)


@pytest.fixture(scope="session")
def blob_grid():
    """An irregular (non-convex) domain on a 20x20 raster."""
    n = 20
    c = (np.arange(n) + 0.5) / n
    xx, yy = np.meshgrid(c, c)
    mask = ((xx - 0.38) ** 2 + (yy - 0.42) ** 2 < 0.28**2) | (
        (xx - 0.62) ** 2 + (yy - 0.60) ** 2 < 0.22**2
    )
    return DomainGrid(mask, 1.0 / n)


@pytest.fixture(scope="session")
def blob_basis(blob_grid):
    return solve_basis(blob_grid, 12)


@pytest.fixture
def kernel():
    return KernelSpec("matern32", variance=1.0, lengthscale=0.2)
