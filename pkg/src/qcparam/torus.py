"""Cutting a closed genus-1 mesh into a disk with lattice-tagged duplicates."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import TopologyError, ValidationError
from .mesh import TriMesh, cotangent_laplacian, signed_areas


@dataclass(frozen=True)
class CutMesh:
    """Disk-topology copy of a torus mesh.

    ``projection[i]`` is the closed-mesh vertex of open vertex ``i`` and
    ``shifts[i]`` its integer lattice coordinates: a periodic map with values
    ``X`` on the closed mesh is drawn on the open mesh as
    ``X[projection] + shifts @ lattice``.
    """

    closed: TriMesh
    open_mesh: TriMesh
    projection: np.ndarray
    shifts: np.ndarray
    lattice: np.ndarray
    cut_edges: np.ndarray

    @property
    def offsets(self):
        return self.shifts @ self.lattice

    @property
    def projection_matrix(self):
        n_open = len(self.projection)
        return sp.csr_matrix(
            (np.ones(n_open), (np.arange(n_open), self.projection)),
            shape=(n_open, self.closed.n_vertices),
        )

    def lift(self, X):
        """Open-mesh positions of a periodic map given per closed vertex."""
        return np.asarray(X)[self.projection] + self.offsets

    def identified_groups(self):
        order = np.argsort(self.projection, kind="stable")
        splits = np.flatnonzero(np.diff(self.projection[order])) + 1
        return np.split(order, splits)


def tree_cotree(mesh):
    """Spanning tree, dual spanning cotree and leftover edges of a closed mesh."""
    n, E = mesh.n_vertices, mesh.n_edges
    edges = mesh.edges
    adj = [[] for _ in range(n)]
    for e, (a, b) in enumerate(edges):
        adj[a].append((b, e))
        adj[b].append((a, e))
    tree = np.zeros(E, dtype=bool)
    parent_edge = np.full(n, -1, dtype=np.int64)
    seen = np.zeros(n, dtype=bool)
    order = [0]
    seen[0] = True
    queue = deque([0])
    while queue:
        v = queue.popleft()
        for w, e in adj[v]:
            if not seen[w]:
                seen[w] = True
                tree[e] = True
                parent_edge[w] = e
                order.append(w)
                queue.append(w)

    m = mesh.n_faces
    fadj = [[] for _ in range(m)]
    for e in np.flatnonzero(~tree):
        f, g = mesh.edge_faces[e]
        if g < 0:
            raise TopologyError("mesh has boundary; expected a closed surface")
        fadj[f].append((g, e))
        fadj[g].append((f, e))
    cotree = np.zeros(E, dtype=bool)
    fseen = np.zeros(m, dtype=bool)
    fseen[0] = True
    queue = deque([0])
    while queue:
        f = queue.popleft()
        for g, e in fadj[f]:
            if not fseen[g]:
                fseen[g] = True
                cotree[e] = True
                queue.append(g)
    leftover = np.flatnonzero(~tree & ~cotree)
    return tree, cotree, leftover, np.array(order), parent_edge


def _prune(edges, keep, n):
    keep = keep.copy()
    deg = np.bincount(edges[keep].ravel(), minlength=n)
    inc = [[] for _ in range(n)]
    for e in np.flatnonzero(keep):
        a, b = edges[e]
        inc[a].append(e)
        inc[b].append(e)
    queue = deque(np.flatnonzero(deg == 1).tolist())
    while queue:
        v = queue.popleft()
        if deg[v] != 1:
            continue
        for e in inc[v]:
            if keep[e]:
                keep[e] = False
                for w in edges[e]:
                    deg[w] -= 1
                    if deg[w] == 1:
                        queue.append(int(w))
                break
    return np.flatnonzero(keep)


def _translation_cocycle(mesh, tree, leftover, order, parent_edge, gens):
    """Integer translation per edge, closed around every vertex."""
    edges = mesh.edges
    n = mesh.n_vertices
    t = np.zeros((mesh.n_edges, 2), dtype=np.int64)
    t[leftover[0]] = gens[0]
    t[leftover[1]] = gens[1]
    # sign(v, e) = +1 when e points into v
    acc = np.zeros((n, 2), dtype=np.int64)
    nontree = np.flatnonzero(~tree)
    np.add.at(acc, edges[nontree, 1], t[nontree])
    np.add.at(acc, edges[nontree, 0], -t[nontree])
    for v in order[:0:-1]:
        e = parent_edge[v]
        s = 1 if edges[e, 1] == v else -1
        t[e] = -s * acc[v]
        p = edges[e, 0] if s == 1 else edges[e, 1]
        acc[p] += (1 if edges[e, 1] == p else -1) * t[e]
    if np.any(acc[order[0]] != 0):
        raise TopologyError("translation cocycle is not closed")
    return t


def _open_shifts(mesh, labels, n_open, cut, t):
    links = [[] for _ in range(n_open)]
    for e in cut:
        h, tw = mesh.edge_halfedges[e]
        f, k = divmod(int(h), 3)
        g, l = divmod(int(tw), 3)
        pairs = [
            (labels[f, k], labels[g, (l + 1) % 3]),
            (labels[f, (k + 1) % 3], labels[g, l]),
        ]
        for of, og in pairs:
            links[of].append((og, -t[e]))
            links[og].append((of, t[e]))
    shifts = np.zeros((n_open, 2), dtype=np.int64)
    done = np.zeros(n_open, dtype=bool)
    for root in range(n_open):
        if done[root]:
            continue
        done[root] = True
        queue = deque([root])
        while queue:
            o = queue.popleft()
            for q, dt in links[o]:
                if not done[q]:
                    done[q] = True
                    shifts[q] = shifts[o] + dt
                    queue.append(q)
                elif np.any(shifts[q] != shifts[o] + dt):
                    raise TopologyError("inconsistent lattice shifts around a vertex")
    return shifts


def periodic_harmonic_map(cut, weights="cotangent", anchor=0):
    """Harmonic map of the torus onto ``R^2 / lattice`` (open-mesh positions).

    ``weights="cotangent"`` uses the closed mesh's cotangent weights with
    negative ones clamped to zero; ``"uniform"`` uses graph (Tutte) weights.
    """
    closed = cut.closed
    if weights == "uniform":
        corners = np.repeat(
            np.array([[[0.0, 0.0], [1.0, 0.0], [0.5, np.sqrt(3) / 2]]]), closed.n_faces, axis=0
        )
    else:
        corners = closed.corners()
    K = cotangent_laplacian(cut.open_mesh.faces, corners, cut.open_mesh.n_vertices)
    if weights != "uniform":
        K = _clamp_offdiag(K)
    P = cut.projection_matrix
    Kr = (P.T @ K @ P).tocsc()
    rhs = -(P.T @ (K @ cut.offsets))
    free = np.ones(closed.n_vertices, dtype=bool)
    free[anchor] = False
    X = np.zeros((closed.n_vertices, 2))
    lu = spla.splu(Kr[free][:, free].tocsc())
    X[free] = lu.solve(rhs[free])
    return cut.lift(X)


def _clamp_offdiag(K, floor=0.0):
    K = K.tocoo()
    off = K.row != K.col
    data = K.data.copy()
    # accumulate by (row, col) before clamping so duplicate entries merge
    A = sp.coo_matrix((data[off], (K.row[off], K.col[off])), shape=K.shape).tocsr()
    A.sum_duplicates()
    A.data = np.minimum(A.data, -floor)
    diag = -np.asarray(A.sum(axis=1)).ravel()
    return (A + sp.diags(diag)).tocsr()


def cut_torus(mesh, lattice=((1.0, 0.0), (0.0, 1.0))):
    """Cut a closed genus-1 mesh along a tree-cotree homology basis.

    The two generators of the lattice are assigned to the two basis loops so
    that the resulting periodic harmonic map is orientation preserving.
    """
    lattice = np.asarray(lattice, dtype=float)
    if lattice.shape != (2, 2) or abs(np.linalg.det(lattice)) < 1e-14:
        raise ValidationError("lattice must be two non-parallel 2D vectors")
    if len(mesh.boundary_halfedges):
        raise TopologyError("mesh has boundary; expected a closed genus-1 surface")
    chi = mesh.euler_characteristic
    if chi != 0:
        raise TopologyError(f"expected genus 1 (Euler characteristic 0), got {chi}")
    tree, cotree, leftover, order, parent_edge = tree_cotree(mesh)
    if len(leftover) != 2:
        raise TopologyError(f"expected 2 homology generators, found {len(leftover)}")
    cut = _prune(mesh.edges, tree | np.isin(np.arange(mesh.n_edges), leftover), mesh.n_vertices)
    n_open, labels = mesh.corner_components(cut)
    # relabel open vertices by first appearance for stable numbering
    _, first = np.unique(labels.ravel(), return_index=True)
    rank = np.empty(n_open, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(n_open)
    labels = rank[labels]
    projection = np.empty(n_open, dtype=np.int64)
    projection[labels.ravel()] = mesh.faces.ravel()
    open_mesh = TriMesh(mesh.vertices[projection], labels, validate=False)
    if open_mesh.euler_characteristic != 1 or len(open_mesh.boundary_loops) != 1:
        raise TopologyError("cutting did not produce a disk")

    result = None
    for gens in (((1, 0), (0, 1)), ((0, 1), (1, 0))):
        t = _translation_cocycle(mesh, tree, leftover, order, parent_edge, np.array(gens))
        shifts = _open_shifts(mesh, labels, n_open, cut, t)
        result = CutMesh(mesh, open_mesh, projection, shifts, lattice, cut)
        pos = periodic_harmonic_map(result, weights="uniform")
        if signed_areas(pos[open_mesh.faces]).sum() > 0:
            break
    else:
        raise TopologyError("could not find an orientation-preserving lattice assignment")
    return result
