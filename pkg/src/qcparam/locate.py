"""Point location in a fold-over-free planar embedding via a uniform bucket grid."""

from __future__ import annotations

import numpy as np

from .errors import OutsideDomainError
from .mesh import signed_areas

_EPS = 1e-12


def barycentric(corners, points):
    """Barycentric coordinates of ``points`` (k, 2) in triangles ``corners`` (k, 3, 2)."""
    a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
    area = signed_areas(corners)

    def sub(p, q, r):
        return 0.5 * ((q[:, 0] - p[:, 0]) * (r[:, 1] - p[:, 1]) - (q[:, 1] - p[:, 1]) * (r[:, 0] - p[:, 0]))

    l0 = sub(points, b, c) / area
    l1 = sub(a, points, c) / area
    l2 = 1.0 - l0 - l1
    return np.stack([l0, l1, l2], axis=1)


def _point_triangle_distance(p, tri):
    best = np.inf
    for k in range(3):
        a, b = tri[k], tri[(k + 1) % 3]
        ab = b - a
        t = np.clip(np.dot(p - a, ab) / max(np.dot(ab, ab), 1e-300), 0.0, 1.0)
        best = min(best, float(np.linalg.norm(p - (a + t * ab))))
    return best


class PointLocator:
    """Finds the image face containing a query point.

    Faces are bucketed by bounding box on a uniform grid with roughly one face
    per cell. Among containing faces the lowest index wins, which makes ties
    on shared edges and vertices deterministic.
    """

    def __init__(self, embedding, tol=1e-10):
        self.embedding = embedding
        self.corners = embedding.corners
        self.tol = tol
        m = len(self.corners)
        lo = self.corners.min(axis=1)
        hi = self.corners.max(axis=1)
        self.origin = lo.min(axis=0)
        extent = np.maximum(hi.max(axis=0) - self.origin, 1e-300)
        n = max(1, int(np.ceil(np.sqrt(m))))
        self.shape = np.array([n, n])
        self.cell = extent / n
        i0 = self._cell_index(lo)
        i1 = self._cell_index(hi)
        buckets = {}
        for f in range(m):
            for ix in range(i0[f, 0], i1[f, 0] + 1):
                for iy in range(i0[f, 1], i1[f, 1] + 1):
                    buckets.setdefault((ix, iy), []).append(f)
        self.buckets = {k: np.array(v, dtype=np.int64) for k, v in buckets.items()}

    def _cell_index(self, pts):
        idx = np.floor((np.atleast_2d(pts) - self.origin) / self.cell).astype(np.int64)
        return np.clip(idx, 0, self.shape - 1)

    def locate(self, query):
        """Return ``(face, barycentric)`` for one point, or raise if outside."""
        q = np.asarray(query, dtype=float)
        cell = tuple(self._cell_index(q)[0])
        cand = self.buckets.get(cell, np.zeros(0, dtype=np.int64))
        if len(cand):
            lam = barycentric(self.corners[cand], np.repeat(q[None], len(cand), axis=0))
            inside = np.all(lam >= -self.tol, axis=1)
            if np.any(inside):
                k = np.flatnonzero(inside)[0]
                bc = np.clip(lam[k], 0.0, 1.0)
                return int(cand[k]), bc / bc.sum()
        dist = min(_point_triangle_distance(q, tri) for tri in self.corners)
        raise OutsideDomainError(
            f"point {q.tolist()} lies outside the image (distance {dist:.3g})",
            point=q, distance=dist,
        )

    def locate_many(self, queries):
        """Vectorised over queries; raises listing every point outside the image."""
        queries = np.asarray(queries, dtype=float)
        faces = np.empty(len(queries), dtype=np.int64)
        bary = np.empty((len(queries), 3))
        outside = []
        for i, q in enumerate(queries):
            try:
                faces[i], bary[i] = self.locate(q)
            except OutsideDomainError as exc:
                outside.append((i, exc.details["distance"]))
        if outside:
            idx = [i for i, _ in outside]
            raise OutsideDomainError(
                f"{len(outside)} point(s) outside the image, e.g. index {idx[0]}",
                indices=idx,
                distances=[d for _, d in outside],
            )
        return faces, bary


def locate_point(embedding, query, tol=1e-10):
    return PointLocator(embedding, tol=tol).locate(query)
