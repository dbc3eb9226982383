import numpy as np
import pytest

from lim3d import CylGridSpec, SparseVoxelTensor


def random_grid(rng, max_dim=8):
    dims = rng.integers(2, max_dim + 1, size=3)
    return CylGridSpec(int(dims[0]), int(dims[1]), int(dims[2]),
                       rho_max=float(dims[0]), z_range=(0.0, float(dims[2])))


def random_sparse_tensor(rng, grid=None, channels=None, max_active=48, max_dim=8):
    """Random active sites with unit-scale gaussian features."""
    if grid is None:
        grid = random_grid(rng, max_dim=max_dim)
    if channels is None:
        channels = int(rng.integers(1, 9))
    n_cells = grid.n_cells
    n_active = int(rng.integers(1, min(n_cells, max_active) + 1))
    keys = rng.choice(n_cells, size=n_active, replace=False)
    coords = np.column_stack([
        keys // (grid.n_phi * grid.n_z),
        (keys // grid.n_z) % grid.n_phi,
        keys % grid.n_z,
    ])
    features = rng.normal(size=(n_active, channels))
    return SparseVoxelTensor(grid=grid, coords=coords, features=features)


def finite_difference(f, x, h=1e-4):
    """Central-difference gradient of a scalar function at array `x`."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += h
        xm = x.copy()
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def max_rel_err(analytic, numeric, floor=1e-3):
    """Elementwise relative error with a floor on the denominator."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float((np.abs(analytic - numeric) / denom).max())


@pytest.fixture
def rng():
    return np.random.default_rng(42)
