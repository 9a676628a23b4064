"""OBJ / OFF readers and writers (vertex and triangle records only)."""

from __future__ import annotations

import os
from collections import deque

import numpy as np

from .errors import MeshIOError, NonManifoldError, ParseError
from .mesh import TriMesh, signed_areas


def _read_off(lines):
    tokens = []
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or not tokens[0].endswith("OFF"):
        raise ParseError("missing OFF header")
    pos = 1
    if tokens[0] != "OFF":
        raise ParseError(f"unsupported OFF variant {tokens[0]!r}")
    try:
        nv, nf = int(tokens[pos]), int(tokens[pos + 1])
        pos += 3
        verts = np.array(tokens[pos : pos + 3 * nv], dtype=float).reshape(nv, 3)
        pos += 3 * nv
        faces = []
        for _ in range(nf):
            k = int(tokens[pos])
            if k != 3:
                raise ParseError(f"only triangles are supported, got a {k}-gon")
            faces.append([int(t) for t in tokens[pos + 1 : pos + 4]])
            pos += 1 + k
    except (ValueError, IndexError) as exc:
        raise ParseError(f"malformed OFF body: {exc}") from None
    return verts, np.array(faces, dtype=np.int64).reshape(-1, 3)


def _read_obj(lines):
    verts, faces = [], []
    for lineno, line in enumerate(lines, 1):
        parts = line.split("#", 1)[0].split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) for p in parts[1:]]
                if len(idx) != 3:
                    raise ParseError(
                        f"line {lineno}: only triangles are supported, got a {len(idx)}-gon"
                    )
                n = len(verts)
                faces.append([i - 1 if i > 0 else n + i for i in idx])
        except ValueError:
            raise ParseError(f"line {lineno}: cannot parse {line.strip()!r}") from None
    if not verts:
        raise ParseError("no vertices")
    v = np.array(verts, dtype=float)
    if v.shape[1] < 3:
        v = np.pad(v, ((0, 0), (0, 3 - v.shape[1])))
    return v, np.array(faces, dtype=np.int64).reshape(-1, 3)


def orient_faces(faces):
    """Flip faces so neighbouring faces traverse shared edges in opposite directions."""
    faces = np.array(faces, dtype=np.int64)
    m = len(faces)
    edge_map = {}
    for f, tri in enumerate(faces):
        for k in range(3):
            a, b = int(tri[k]), int(tri[(k + 1) % 3])
            edge_map.setdefault((min(a, b), max(a, b)), []).append(f)
    for key, fs in edge_map.items():
        if len(fs) > 2:
            raise NonManifoldError("edge borders more than two faces", edge=key)
    flipped = np.zeros(m, dtype=bool)
    seen = np.zeros(m, dtype=bool)

    def directed(f, a, b):
        tri = list(faces[f])
        if flipped[f]:
            tri = tri[::-1]
        for k in range(3):
            if tri[k] == a and tri[(k + 1) % 3] == b:
                return True
        return False

    for root in range(m):
        if seen[root]:
            continue
        seen[root] = True
        queue = deque([root])
        while queue:
            f = queue.popleft()
            tri = faces[f][::-1] if flipped[f] else faces[f]
            for k in range(3):
                a, b = int(tri[k]), int(tri[(k + 1) % 3])
                for g in edge_map[(min(a, b), max(a, b))]:
                    if g == f:
                        continue
                    same = directed(g, a, b)
                    if not seen[g]:
                        seen[g] = True
                        flipped[g] = same
                        queue.append(g)
                    elif same:
                        raise NonManifoldError("surface is not orientable")
    faces[flipped] = faces[flipped][:, ::-1]
    return faces


def read_arrays(path, fmt=None):
    """Raw ``(vertices (n, 3), faces (m, 3))`` of an OBJ/OFF file, without validation."""
    path = os.fspath(path)
    fmt = (fmt or os.path.splitext(path)[1].lstrip(".")).lower()
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise MeshIOError(f"cannot read {path}: {exc.strerror}") from None
    if fmt == "off":
        verts, faces = _read_off(lines)
    elif fmt == "obj":
        verts, faces = _read_obj(lines)
    else:
        raise ParseError(f"unknown mesh format {fmt!r}")
    if len(faces) == 0:
        raise ParseError("no faces")
    if faces.min() < 0 or faces.max() >= len(verts):
        raise ParseError("face index out of range")
    return verts, faces


def load_mesh(path, fmt=None):
    """Read an OBJ or OFF triangle mesh and return a validated :class:`TriMesh`.

    Meshes lying in the ``z = 0`` plane are returned as planar (2D) meshes,
    counter-clockwise oriented.
    """
    verts, faces = read_arrays(path, fmt)
    if np.all(verts[:, 2] == 0.0):
        verts = verts[:, :2]
    try:
        mesh = TriMesh(verts, faces, validate=False)
    except NonManifoldError as exc:
        if "orientation" not in str(exc):
            raise
        faces = orient_faces(faces)
        mesh = TriMesh(verts, faces, validate=False)
    if mesh.dim == 2:
        sa = signed_areas(mesh.corners())
        if np.sum(sa) < 0:
            mesh = TriMesh(verts, faces[:, ::-1], validate=False)
    mesh.validate()
    return mesh


def save_mesh(path, vertices, faces, fmt=None, comment=None):
    """Write vertices/faces as OBJ or OFF with 17 significant digits."""
    path = os.fspath(path)
    fmt = (fmt or os.path.splitext(path)[1].lstrip(".")).lower()
    v = np.asarray(vertices, dtype=float)
    if v.shape[1] == 2:
        v = np.pad(v, ((0, 0), (0, 1)))
    f = np.asarray(faces, dtype=np.int64)
    out = []
    if comment:
        out.extend(f"# {line}" for line in str(comment).splitlines())
    if fmt == "obj":
        out.extend("v %.17g %.17g %.17g" % tuple(p) for p in v)
        out.extend("f %d %d %d" % tuple(t + 1) for t in f)
    elif fmt == "off":
        out.insert(0, "OFF")
        out.append(f"{len(v)} {len(f)} 0")
        out.extend("%.17g %.17g %.17g" % tuple(p) for p in v)
        out.extend("3 %d %d %d" % tuple(t) for t in f)
    else:
        raise MeshIOError(f"unknown mesh format {fmt!r}")
    try:
        with open(path, "w") as fh:
            fh.write("\n".join(out) + "\n")
    except OSError as exc:
        raise MeshIOError(f"cannot write {path}: {exc.strerror}") from None
