"""Triangle mesh connectivity and per-face geometry kernels.

Faces are stored as an ``(m, 3)`` integer array; half-edge ``h = 3*f + k``
runs from ``faces[f, k]`` to ``faces[f, (k+1) % 3]``. Edges are paired from
half-edges rather than from vertex pairs, so coarse periodic grids where two
distinct edges join the same pair of vertices are still representable.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import (
    DegenerateFaceError,
    DisconnectedMeshError,
    NonManifoldError,
    ValidationError,
)

ROT90 = np.array([[0.0, -1.0], [1.0, 0.0]])
DEGENERATE_REL_TOL = 1e-14


def _freeze(a):
    a.setflags(write=False)
    return a


class TriMesh:
    """Immutable triangle mesh: vertex positions (any dimension >= 2) and faces."""

    def __init__(self, vertices, faces, *, validate=True):
        vertices = np.array(vertices, dtype=float)
        faces = np.array(faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] < 2:
            raise ValidationError(f"vertices must be (n, d>=2), got {vertices.shape}")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValidationError(f"faces must be (m, 3), got {faces.shape}")
        if len(faces) == 0:
            raise ValidationError("mesh has no faces")
        if faces.min() < 0 or faces.max() >= len(vertices):
            raise ValidationError("face references a vertex index out of range")
        self.vertices = _freeze(vertices)
        self.faces = _freeze(faces)
        self._pair_halfedges()
        if validate:
            self.validate()

    # -- connectivity -----------------------------------------------------

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def dim(self):
        return self.vertices.shape[1]

    @property
    def euler_characteristic(self):
        return self.n_vertices - self.n_edges + self.n_faces

    @property
    def halfedge_src(self):
        return self.faces.ravel()

    @property
    def halfedge_dst(self):
        return np.roll(self.faces, -1, axis=1).ravel()

    def _pair_halfedges(self):
        n = self.n_vertices
        src, dst = self.halfedge_src, self.halfedge_dst
        if np.any(src == dst):
            bad = np.unique(np.flatnonzero(src == dst) // 3)
            raise DegenerateFaceError("face repeats a vertex", faces=bad[:10])
        key = np.minimum(src, dst) * n + np.maximum(src, dst)
        order = np.argsort(key, kind="stable")
        ks = key[order]
        starts = np.flatnonzero(np.r_[True, ks[1:] != ks[:-1]])
        counts = np.diff(np.r_[starts, len(ks)])
        twin = np.full(len(src), -1, dtype=np.int64)

        g2 = starts[counts == 2]
        a, b = order[g2], order[g2 + 1]
        same_dir = src[a] != dst[b]
        if np.any(same_dir):
            raise NonManifoldError(
                "inconsistent face orientation across an edge",
                faces=np.unique(np.r_[a[same_dir], b[same_dir]] // 3)[:10],
            )
        twin[a], twin[b] = b, a
        for s, c in zip(starts[counts > 2], counts[counts > 2]):
            hes = order[s : s + c]
            fwd = [h for h in hes if src[h] < dst[h]]
            bwd = [h for h in hes if src[h] > dst[h]]
            if len(fwd) != len(bwd):
                raise NonManifoldError(
                    "edge borders more than two faces",
                    edge=(int(src[hes[0]]), int(dst[hes[0]])),
                )
            for h, t in zip(fwd, bwd):
                twin[h], twin[t] = t, h

        rep = np.where(twin >= 0, np.minimum(np.arange(len(src)), twin), np.arange(len(src)))
        reps, he_edge = np.unique(rep, return_inverse=True)
        self.twin = _freeze(twin)
        self.halfedge_edge = _freeze(he_edge.reshape(-1))
        self.edges = _freeze(np.stack([src[reps], dst[reps]], axis=1))
        other = twin[reps]
        self.edge_faces = _freeze(
            np.stack([reps // 3, np.where(other >= 0, other // 3, -1)], axis=1)
        )
        self.edge_halfedges = _freeze(np.stack([reps, other], axis=1))

    @property
    def face_edges(self):
        """Edge index of each face's half-edges, shape ``(m, 3)``."""
        return self.halfedge_edge.reshape(-1, 3)

    @cached_property
    def interior_edges(self):
        return np.flatnonzero(self.edge_faces[:, 1] >= 0)

    @cached_property
    def boundary_halfedges(self):
        return np.flatnonzero(self.twin < 0)

    def corner_components(self, cut_edges=None):
        """Label face corners glued across edges not in ``cut_edges``.

        Returns ``(n_components, labels)`` with ``labels`` of shape ``(m, 3)``.
        Two corners share a label iff they belong to the same vertex and can
        be reached from each other by rotating around it without crossing a
        boundary or cut edge.
        """
        m = self.n_faces
        mask = np.ones(self.n_edges, dtype=bool)
        if cut_edges is not None:
            mask[np.asarray(cut_edges, dtype=np.int64)] = False
        e = self.interior_edges[mask[self.interior_edges]]
        h, t = self.edge_halfedges[e, 0], self.edge_halfedges[e, 1]
        f, k = h // 3, h % 3
        g, l = t // 3, t % 3
        rows = np.r_[3 * f + k, 3 * f + (k + 1) % 3]
        cols = np.r_[3 * g + (l + 1) % 3, 3 * g + l]
        graph = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(3 * m, 3 * m))
        ncomp, labels = connected_components(graph, directed=False)
        return ncomp, labels.reshape(m, 3)

    @cached_property
    def boundary_loops(self):
        """Boundary vertex loops, each ordered along the face orientation."""
        hes = self.boundary_halfedges
        if len(hes) == 0:
            return []
        src, dst = self.halfedge_src, self.halfedge_dst
        out = {}
        for h in hes:
            v = int(src[h])
            if v in out:
                raise NonManifoldError("vertex with two outgoing boundary edges", vertex=v)
            out[v] = int(dst[h])
        loops, seen = [], set()
        for start in sorted(out):
            if start in seen:
                continue
            loop, v = [], start
            while v not in seen:
                seen.add(v)
                loop.append(v)
                v = out[v]
            loops.append(np.array(loop, dtype=np.int64))
        loops.sort(key=len, reverse=True)
        return loops

    @cached_property
    def boundary_vertices(self):
        if not self.boundary_loops:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(self.boundary_loops))

    @cached_property
    def is_boundary_vertex(self):
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.boundary_vertices] = True
        return mask

    @cached_property
    def vertex_face_incidence(self):
        """Sparse ``(n, m)`` matrix with a one for each face corner."""
        m = self.n_faces
        return sp.csr_matrix(
            (np.ones(3 * m), (self.faces.ravel(), np.repeat(np.arange(m), 3))),
            shape=(self.n_vertices, m),
        )

    def with_vertices(self, vertices):
        """Same connectivity, new vertex positions (no re-validation)."""
        other = object.__new__(TriMesh)
        other.__dict__.update(
            {k: v for k, v in self.__dict__.items() if k not in ("vertices", "face_areas")}
        )
        vertices = np.array(vertices, dtype=float)
        if len(vertices) != self.n_vertices:
            raise ValidationError("vertex count does not match connectivity")
        other.vertices = _freeze(vertices)
        return other

    # -- validation -------------------------------------------------------

    def degenerate_tolerance(self):
        ext = self.vertices.max(axis=0) - self.vertices.min(axis=0)
        return DEGENERATE_REL_TOL * float(ext @ ext)

    def validate(self):
        srt = np.sort(self.faces, axis=1)
        _, idx, cnt = np.unique(srt, axis=0, return_index=True, return_counts=True)
        if np.any(cnt > 1):
            raise NonManifoldError("repeated face", faces=np.sort(idx[cnt > 1])[:10])
        areas = triangle_areas(self.corners())
        bad = np.flatnonzero(areas <= self.degenerate_tolerance())
        if len(bad):
            raise DegenerateFaceError("zero-area face", faces=bad[:10])
        ncomp, labels = self.corner_components()
        per_vertex = np.bincount(
            self.faces.ravel()[np.unique(labels.ravel(), return_index=True)[1]],
            minlength=self.n_vertices,
        )
        if np.any(per_vertex > 1):
            raise NonManifoldError(
                "non-manifold vertex (faces share a vertex but no edge)",
                vertices=np.flatnonzero(per_vertex > 1)[:10],
            )
        if np.any(per_vertex == 0):
            raise DisconnectedMeshError(
                "isolated vertex", vertices=np.flatnonzero(per_vertex == 0)[:10]
            )
        ef = self.edge_faces[self.interior_edges]
        adj = sp.coo_matrix(
            (np.ones(len(ef)), (ef[:, 0], ef[:, 1])), shape=(self.n_faces,) * 2
        )
        ncc, _ = connected_components(adj, directed=False)
        if ncc != 1:
            raise DisconnectedMeshError(f"mesh has {ncc} connected components")
        _ = self.boundary_loops
        if self.dim == 2:
            sa = signed_areas(self.corners())
            if np.any(sa <= 0):
                raise DegenerateFaceError(
                    "planar mesh has negatively oriented faces",
                    faces=np.flatnonzero(sa <= 0)[:10],
                )

    # -- geometry ---------------------------------------------------------

    def corners(self, positions=None):
        pos = self.vertices if positions is None else np.asarray(positions, dtype=float)
        return pos[self.faces]

    @cached_property
    def face_areas(self):
        return triangle_areas(self.corners())

    @property
    def total_area(self):
        return float(self.face_areas.sum())


def triangle_areas(corners):
    """Unsigned areas of triangles given as ``(..., 3, d)`` corner arrays."""
    e1 = corners[..., 1, :] - corners[..., 0, :]
    e2 = corners[..., 2, :] - corners[..., 0, :]
    g11 = np.einsum("...i,...i", e1, e1)
    g22 = np.einsum("...i,...i", e2, e2)
    g12 = np.einsum("...i,...i", e1, e2)
    return 0.5 * np.sqrt(np.maximum(g11 * g22 - g12 * g12, 0.0))


def signed_areas(corners):
    """Signed areas of planar triangles, positive for counter-clockwise."""
    e1 = corners[..., 1, :] - corners[..., 0, :]
    e2 = corners[..., 2, :] - corners[..., 0, :]
    return 0.5 * (e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])


def face_area(mesh, face):
    if not 0 <= face < mesh.n_faces:
        raise IndexError(f"face {face} out of range")
    return float(triangle_areas(mesh.corners()[face]))


def gradient_operator(corners):
    """Per-face matrices ``G`` (``(..., 2, 3)``) with ``grad u = G @ u``.

    Columns are ``Rot90 (w_{i+2} - w_{i+1}) / (2 Area)``.
    """
    w = np.asarray(corners, dtype=float)
    d = np.stack(
        [w[..., 2, :] - w[..., 1, :], w[..., 0, :] - w[..., 2, :], w[..., 1, :] - w[..., 0, :]],
        axis=-1,
    )
    area = signed_areas(w)
    if np.any(area == 0):
        raise DegenerateFaceError("gradient of a degenerate face")
    return np.einsum("ij,...jk->...ik", ROT90, d) / (2.0 * area[..., None, None])


def pl_gradient(points, values):
    """Gradient of the linear interpolant of ``values`` on planar triangle(s)."""
    G = gradient_operator(points)
    return np.einsum("...ij,...j->...i", G, np.asarray(values, dtype=float))


def local_frames(corners):
    """Isometric planar copies of (possibly 3D) triangles.

    Corner 0 goes to the origin, corner 1 to the positive x axis; orientation
    follows the vertex order.
    """
    corners = np.asarray(corners, dtype=float)
    if corners.shape[-1] == 2:
        return corners.copy()
    e1 = corners[:, 1] - corners[:, 0]
    e2 = corners[:, 2] - corners[:, 0]
    l1 = np.linalg.norm(e1, axis=1)
    x = np.einsum("ij,ij->i", e1, e2) / l1
    y = 2.0 * triangle_areas(corners) / l1
    out = np.zeros((len(corners), 3, 2))
    out[:, 1, 0] = l1
    out[:, 2, 0] = x
    out[:, 2, 1] = y
    return out


def corner_cotangents(corners):
    """Cotangent of the interior angle at each corner, from edge lengths."""
    c = np.asarray(corners, dtype=float)
    # squared length of the edge opposite corner k
    opp = np.stack(
        [
            np.sum((c[:, 2] - c[:, 1]) ** 2, axis=1),
            np.sum((c[:, 0] - c[:, 2]) ** 2, axis=1),
            np.sum((c[:, 1] - c[:, 0]) ** 2, axis=1),
        ],
        axis=1,
    )
    area = triangle_areas(c)
    total = opp.sum(axis=1, keepdims=True)
    # b^2 + c^2 - a^2 = total - 2 a^2
    return (total - 2.0 * opp) / (4.0 * area[:, None])


def cotangent_laplacian(faces, corners, n_vertices, corner_vertex=None):
    """Stiffness matrix of the P1 Dirichlet energy ``int |grad u|^2``.

    Off-diagonal ``L_ij = -(cot a + cot b)/2`` over the angles opposite edge
    ``ij``; rows sum to zero. ``corner_vertex`` (default ``faces``) maps face
    corners to unknowns, which is how periodic identifications are applied.
    """
    cv = np.asarray(faces if corner_vertex is None else corner_vertex)
    cot = corner_cotangents(corners)
    i = np.r_[cv[:, 1], cv[:, 2], cv[:, 0]]
    j = np.r_[cv[:, 2], cv[:, 0], cv[:, 1]]
    w = 0.5 * np.r_[cot[:, 0], cot[:, 1], cot[:, 2]]
    L = sp.coo_matrix(
        (np.r_[-w, -w, w, w], (np.r_[i, j, i, j], np.r_[j, i, i, j])),
        shape=(n_vertices, n_vertices),
    )
    return L.tocsr()


def edge_cotangent_weights(mesh, corners):
    """Cotangent weight ``(cot a + cot b)/2`` per edge; boundary edges use one angle."""
    cot = corner_cotangents(corners)
    # half-edge k of a face (corner k -> k+1) is opposite corner k+2
    he_cot = 0.5 * cot[:, [2, 0, 1]].ravel()
    return np.bincount(mesh.halfedge_edge, weights=he_cot, minlength=mesh.n_edges)


def triangle_quality(corners):
    """Normalized inradius/circumradius ratio ``2r/R``; 1 for equilateral."""
    c = np.asarray(corners, dtype=float)
    a = np.linalg.norm(c[:, 2] - c[:, 1], axis=1)
    b = np.linalg.norm(c[:, 0] - c[:, 2], axis=1)
    d = np.linalg.norm(c[:, 1] - c[:, 0], axis=1)
    area = triangle_areas(c)
    s = 0.5 * (a + b + d)
    return 8.0 * area**2 / (s * a * b * d)


@dataclass(frozen=True)
class Embedding2D:
    """Planar images of a mesh's vertices, i.e. a piecewise-linear map."""

    mesh: TriMesh
    positions: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.shape != (self.mesh.n_vertices, 2):
            raise ValidationError(
                f"embedding must be ({self.mesh.n_vertices}, 2), got {pos.shape}"
            )
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)

    @property
    def corners(self):
        return self.positions[self.mesh.faces]

    @property
    def signed_areas(self):
        return signed_areas(self.corners)

    @property
    def flipped_count(self):
        return orientation_report(self)

    @property
    def fold_free(self):
        return self.flipped_count == 0

    def as_mesh(self):
        return self.mesh.with_vertices(self.positions)


def orientation_report(embedding, tol=None):
    """Number of image triangles with signed area <= 0 (within ``tol``)."""
    sa = signed_areas(embedding.corners)
    if tol is None:
        pos = embedding.positions
        ext = pos.max(axis=0) - pos.min(axis=0)
        tol = DEGENERATE_REL_TOL * float(ext @ ext)
    return int(np.count_nonzero(sa <= tol))
