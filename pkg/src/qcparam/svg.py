"""Deterministic SVG wireframes of planar embeddings."""

from __future__ import annotations

import numpy as np

# viridis-like ramp, low to high
_RAMP = np.array(
    [
        [68, 1, 84],
        [59, 82, 139],
        [33, 145, 140],
        [94, 201, 98],
        [253, 231, 37],
    ],
    dtype=float,
)


def _color(t):
    t = float(np.clip(t, 0.0, 1.0)) * (len(_RAMP) - 1)
    i = min(int(t), len(_RAMP) - 2)
    c = _RAMP[i] + (t - i) * (_RAMP[i + 1] - _RAMP[i])
    return "#%02x%02x%02x" % tuple(int(round(x)) for x in c)


def render_svg(embedding, values=None, *, size=800, margin=10, stroke="#202020",
               stroke_width=0.6, fill="#f4f4f4", vmin=None, vmax=None):
    """SVG text for the embedding; ``values`` (one per face) colours the faces.

    Output depends only on the inputs, so rendering twice gives identical bytes.
    """
    pos = np.asarray(embedding.positions, dtype=float)
    faces = embedding.mesh.faces
    lo, hi = pos.min(axis=0), pos.max(axis=0)
    span = max(float((hi - lo).max()), 1e-300)
    scale = (size - 2 * margin) / span
    # flip y so the picture has the usual orientation
    xy = np.column_stack([pos[:, 0] - lo[0], hi[1] - pos[:, 1]]) * scale + margin
    w = int(np.ceil((hi[0] - lo[0]) * scale + 2 * margin))
    h = int(np.ceil((hi[1] - lo[1]) * scale + 2 * margin))
    if values is not None:
        values = np.asarray(values, dtype=float).ravel()
        finite = values[np.isfinite(values)]
        a = float(finite.min(initial=0.0)) if vmin is None else vmin
        b = float(finite.max(initial=0.0)) if vmax is None else vmax
        values = np.nan_to_num(values, nan=b, posinf=b, neginf=a)
        norm = (values - a) / (b - a) if b > a else np.zeros_like(values)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<g stroke="{stroke}" stroke-width="{stroke_width}" stroke-linejoin="round">',
    ]
    for f, tri in enumerate(faces):
        pts = " ".join(f"{xy[v, 0]:.3f},{xy[v, 1]:.3f}" for v in tri)
        col = fill if values is None else _color(norm[f])
        out.append(f'<polygon points="{pts}" fill="{col}"/>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, embedding, values=None, **kw):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_svg(embedding, values, **kw))
