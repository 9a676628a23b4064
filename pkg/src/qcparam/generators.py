"""Synthetic meshes used as fixtures and by the examples in the README."""

from __future__ import annotations

import numpy as np
from scipy.spatial import Delaunay

from .mesh import TriMesh


def grid_mesh(nx, ny, width=1.0, height=1.0, origin=(0.0, 0.0)):
    """Structured ``nx`` by ``ny`` cell grid, each cell split along one diagonal."""
    xs = np.linspace(0.0, width, nx + 1) + origin[0]
    ys = np.linspace(0.0, height, ny + 1) + origin[1]
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, 1:].ravel()
    d = idx[1:, :-1].ravel()
    faces = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return TriMesh(verts, faces)


def disk_points(n_boundary, spacing, radius=1.0, jitter=0.25, seed=0):
    """Jittered hexagonal points inside a disk plus evenly spaced boundary points."""
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, 2 * np.pi, n_boundary, endpoint=False)
    boundary = radius * np.column_stack([np.cos(t), np.sin(t)])
    rows = np.arange(-radius, radius + spacing, spacing * np.sqrt(3) / 2)
    pts = []
    for i, y in enumerate(rows):
        xs = np.arange(-radius, radius + spacing, spacing) + (i % 2) * spacing / 2
        pts.append(np.column_stack([xs, np.full_like(xs, y)]))
    pts = np.concatenate(pts)
    pts = pts + rng.uniform(-jitter, jitter, pts.shape) * spacing
    keep = np.linalg.norm(pts, axis=1) < radius - 0.6 * spacing
    return np.concatenate([boundary, pts[keep]])


def disk_mesh(n_faces=1000, radius=1.0, jitter=0.25, seed=0):
    """Delaunay triangulation of randomly jittered points in a disk.

    ``n_faces`` is a target; the result is within a few percent of it.
    """
    # F ~ 2 V for a disk; area per vertex of a hex lattice is sqrt(3)/2 h^2
    n_vertices = n_faces / 2.0
    spacing = radius * np.sqrt(np.pi / (n_vertices * np.sqrt(3) / 2))
    n_boundary = max(8, int(round(2 * np.pi * radius / spacing)))
    pts = disk_points(n_boundary, spacing, radius, jitter, seed)
    tri = Delaunay(pts)
    faces = tri.simplices
    c = pts[faces]
    sa = 0.5 * (
        (c[:, 1, 0] - c[:, 0, 0]) * (c[:, 2, 1] - c[:, 0, 1])
        - (c[:, 1, 1] - c[:, 0, 1]) * (c[:, 2, 0] - c[:, 0, 0])
    )
    faces = np.where(sa[:, None] > 0, faces, faces[:, ::-1])
    keep = np.abs(sa) > 1e-12 * radius**2
    return TriMesh(pts, faces[keep])


def lift_surface(mesh, height):
    """3D surface ``(x, y, height(x, y))`` over a planar mesh."""
    v = mesh.vertices
    z = height(v[:, 0], v[:, 1])
    return TriMesh(np.column_stack([v, z]), mesh.faces)


def spherical_cap(mesh, max_polar=np.pi / 2):
    """Map a unit-disk mesh onto a spherical cap by ``r -> polar angle r*max_polar``."""
    v = mesh.vertices
    r = np.linalg.norm(v, axis=1)
    theta = np.arctan2(v[:, 1], v[:, 0])
    phi = r * max_polar
    pts = np.column_stack(
        [np.sin(phi) * np.cos(theta), np.sin(phi) * np.sin(theta), np.cos(phi)]
    )
    return TriMesh(pts, mesh.faces)


def bumpy_disk(n_faces=1000, amplitude=0.3, seed=0):
    """Curved disk-topology surface: a dome with an off-centre bump."""

    def height(x, y):
        dome = 0.4 * (1.0 - x**2 - y**2)
        bump = amplitude * np.exp(-8.0 * ((x - 0.35) ** 2 + (y + 0.2) ** 2))
        return dome + bump

    return lift_surface(disk_mesh(n_faces, seed=seed), height)


def _torus_faces(nu, nv):
    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    i, j = i.ravel(), j.ravel()

    def vid(a, b):
        return (a % nu) * nv + (b % nv)

    a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
    return np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])


def flat_torus(nu, nv, lattice=((1.0, 0.0), (0.0, 1.0))):
    """Structured torus whose triangles are all congruent (intrinsically flat).

    Embedded in R^4 as a product of two regular polygons with side lengths
    matching the grid spacing, so every face is an isometric copy of the
    corresponding cell triangle of ``R^2 / lattice``.
    """
    lattice = np.asarray(lattice, dtype=float)
    if abs(lattice[0] @ lattice[1]) > 1e-14:
        raise ValueError("flat_torus supports rectangular lattices only")
    lu, lv = np.linalg.norm(lattice[0]), np.linalg.norm(lattice[1])
    hu, hv = lu / nu, lv / nv
    ru, rv = hu / (2 * np.sin(np.pi / nu)), hv / (2 * np.sin(np.pi / nv))
    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    a, b = 2 * np.pi * i.ravel() / nu, 2 * np.pi * j.ravel() / nv
    verts = np.column_stack(
        [ru * np.cos(a), ru * np.sin(a), rv * np.cos(b), rv * np.sin(b)]
    )
    return TriMesh(verts, _torus_faces(nu, nv))


def ring_torus(nu, nv, R=1.0, r=0.4):
    """Standard torus of revolution in R^3."""
    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    a, b = 2 * np.pi * i.ravel() / nu, 2 * np.pi * j.ravel() / nv
    verts = np.column_stack(
        [(R + r * np.cos(b)) * np.cos(a), (R + r * np.cos(b)) * np.sin(a), r * np.sin(b)]
    )
    return TriMesh(verts, _torus_faces(nu, nv))


def bad_mesh(n=12, seed=0):
    """Planar mesh with many skinny triangles: a grid under a non-uniform shear/stretch."""
    base = grid_mesh(n, n)
    rng = np.random.default_rng(seed)
    v = base.vertices.copy()
    x, y = v[:, 0], v[:, 1]
    nx = x + 0.6 * y * (1 - y) + 0.15 * np.sin(2 * np.pi * y)
    ny = 0.25 * y + 0.05 * x * (1 - x)
    interior = ~base.is_boundary_vertex
    out = np.column_stack([nx, ny])
    out[interior] += rng.uniform(-0.1, 0.1, (interior.sum(), 2)) * np.array([1 / n, 0.25 / n])
    return TriMesh(out, base.faces)
