import numpy as np
import pytest

from qcparam.generators import bumpy_disk, disk_mesh, flat_torus, grid_mesh
from qcparam.mesh import Embedding2D, TriMesh


def octahedron():
    v = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    f = [[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4], [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]]
    return TriMesh(v, f)


def hexagon_fan(radius=1.0):
    ang = np.arange(6) * np.pi / 3
    v = np.vstack([[0.0, 0.0], radius * np.column_stack([np.cos(ang), np.sin(ang)])])
    f = [[0, 1 + i, 1 + (i + 1) % 6] for i in range(6)]
    return TriMesh(v, f)


def equilateral_grid(nx, ny):
    """Structured grid of equilateral triangles (sheared square grid)."""
    g = grid_mesh(nx, ny)
    v = g.vertices.copy()
    v = np.column_stack([v[:, 0] + 0.5 * v[:, 1] * ny / nx, v[:, 1] * np.sqrt(3) / 2 * ny / nx])
    # grid_mesh splits along (a, c); the equilateral split is along (b, d)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    faces = np.concatenate([np.column_stack([a, b, d]), np.column_stack([b, c, d])])
    return TriMesh(v, faces)


@pytest.fixture(scope="session")
def unit_square():
    return grid_mesh(8, 8)


@pytest.fixture(scope="session")
def small_disk():
    return disk_mesh(400, seed=3)


@pytest.fixture(scope="session")
def bumpy():
    return bumpy_disk(600, seed=2)


@pytest.fixture(scope="session")
def torus():
    return flat_torus(8, 6)


@pytest.fixture
def identity(unit_square):
    return Embedding2D(unit_square, unit_square.vertices)
