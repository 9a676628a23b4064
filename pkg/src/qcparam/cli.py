"""``param`` command-line front end.

Subcommands: ``run`` (full pipeline from a config file), ``evaluate``
(energy terms of a given map), ``remesh`` (lift a planar mesh back onto the
surface) and ``render`` (SVG of a planar mesh).

Log verbosity is read from the ``QCPARAM_LOG`` environment variable
(``quiet``, ``info`` or ``debug``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .driver import (
    REPORT_FIELDS,
    Schedule,
    TargetDomain,
    evaluate_map,
    compose_remesh,
    genus1_setup,
    initial_map,
    make_state,
    run,
    source_density,
)
from .beltrami_flow import DualGraph
from .errors import MeshIOError, QCParamError, ValidationError
from .measure import ReferenceDensity
from .mesh import Embedding2D, TriMesh
from .meshio import load_mesh, read_arrays, save_mesh
from .qc import compute_beltrami, lscm
from .svg import write_svg
from .transport import FlowParams

log = logging.getLogger("qcparam")

METRICS_SCHEMA = "qcparam.metrics/1"
LOG_ENV = "QCPARAM_LOG"
_LEVELS = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}

DEFAULT_CONFIG = {
    "mesh": None,
    "target": {"kind": "disk", "radius": 1.0},
    "source": {"kind": "area"},
    "reference": {"kind": "uniform"},
    "initial": "harmonic",
    "constraint": "dirichlet",
    "schedule": {
        "t1": 0.0015,
        "t2": 0.0,
        "t3": 0.0,
        "iters": 50,
        "cap_k": 0.9,
        "tau_fp": None,
        "tau_smooth": None,
        "max_backtracks": 20,
        "boundary_density": "linear",
        "stop_tol": 1e-8,
        "stop_atol": 1e-12,
        "patience": 3,
        "alpha": 1.0,
        "beta": 1.0,
        "per_iteration": None,
    },
    "output": {"mesh": "param.obj", "metrics": "metrics.jsonl", "svg_every": 0},
}


def setup_logging():
    level = os.environ.get(LOG_ENV, "quiet").strip().lower()
    if level not in _LEVELS:
        level = "quiet"
    logging.basicConfig(level=_LEVELS[level], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


# -- configuration ------------------------------------------------------------


def _merge(base, extra):
    out = dict(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def read_config(path):
    """Parse a YAML or JSON config file (JSON is a subset of YAML)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise MeshIOError(f"cannot read config {path}: {exc.strerror}", stage="config") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ValidationError(f"cannot parse config {path}: {exc}", stage="config") from None
    if not isinstance(data, dict):
        raise ValidationError("config must be a mapping", stage="config")
    return data


def resolve_config(file_cfg, overrides, base_dir=None):
    """Defaults, then the config file, then command-line flags; paths made absolute."""
    cfg = _merge(DEFAULT_CONFIG, file_cfg)
    cfg = _merge(cfg, overrides)
    base = Path(base_dir) if base_dir else Path.cwd()

    def absolute(p):
        return None if p is None else str((base / p).resolve()) if not os.path.isabs(p) else p

    cfg["mesh"] = absolute(cfg.get("mesh"))
    for key in ("source", "reference"):
        if cfg[key].get("path"):
            cfg[key] = dict(cfg[key], path=absolute(cfg[key]["path"]))
    if cfg.get("chart"):
        cfg["chart"] = absolute(cfg["chart"])
    return cfg


def validate_config(cfg):
    """Range and existence checks done before any computation."""
    if not cfg.get("mesh"):
        raise ValidationError("config has no input mesh", stage="config")
    for key in ("mesh", "chart"):
        if cfg.get(key) and not os.path.exists(cfg[key]):
            raise ValidationError(f"{key} file not found: {cfg[key]}", stage="config")
    for key in ("source", "reference"):
        p = cfg[key].get("path")
        if p and not os.path.exists(p):
            raise ValidationError(f"{key} file not found: {p}", stage="config")
    target = TargetDomain.from_dict(cfg["target"])
    if cfg["initial"] not in ("harmonic", "lscm"):
        raise ValidationError(f"unknown initial map {cfg['initial']!r}", stage="config")
    if cfg["constraint"] not in ("dirichlet", "landmark"):
        raise ValidationError(f"unknown constraint mode {cfg['constraint']!r}", stage="config")
    schedule = build_schedule(cfg["schedule"])
    return target, schedule


def _flow_params(s, entry=None):
    entry = entry or {}
    get = lambda k: entry.get(k, s.get(k))  # noqa: E731
    try:
        return FlowParams(
            t1=float(get("t1")), t2=float(get("t2")), t3=float(get("t3")),
            tau_fp=None if get("tau_fp") is None else float(get("tau_fp")),
            tau_smooth=None if get("tau_smooth") is None else float(get("tau_smooth")),
            cap_k=float(get("cap_k")), max_backtracks=int(get("max_backtracks")),
            boundary_density=str(get("boundary_density")),
        )
    except ValidationError as exc:
        exc.stage = "config"
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad schedule value: {exc}", stage="config") from None


def build_schedule(s):
    per = s.get("per_iteration")
    params = [_flow_params(s, e) for e in per] if per else _flow_params(s)
    patience = s.get("patience")
    try:
        return Schedule(params, max_iter=int(s["iters"]), stop_tol=float(s["stop_tol"]),
                        stop_atol=float(s["stop_atol"]),
                        patience=None if patience in (None, 0) else int(patience),
                        alpha=float(s["alpha"]), beta=float(s["beta"]))
    except ValidationError as exc:
        exc.stage = "config"
        raise


def build_reference(spec, target):
    kind = spec.get("kind", "uniform")
    if kind == "uniform":
        return ReferenceDensity.uniform()
    if kind == "gaussian":
        return ReferenceDensity.gaussian(spec.get("center", (0.0, 0.0)), float(spec.get("rate", 1.0)))
    if kind == "cosine":
        return ReferenceDensity.cosine(float(spec.get("amplitude", 1.0)),
                                       spec.get("lattice", target.lattice))
    if kind == "grid":
        return ReferenceDensity.from_file(spec["path"])
    raise ValidationError(f"unknown reference density kind {kind!r}", stage="config")


def _read_face_values(path, n_faces):
    try:
        vals = np.loadtxt(path, dtype=float, ndmin=1)
    except OSError as exc:
        raise MeshIOError(f"cannot read {path}: {exc}") from None
    except ValueError:
        raise ValidationError(f"malformed per-face density file {path}") from None
    if vals.size != n_faces:
        raise ValidationError(f"per-face density has {vals.size} values for {n_faces} faces")
    return vals.ravel()


def build_source(spec, mesh):
    kind = spec.get("kind", "area")
    if kind == "file":
        return source_density(mesh, "file", _read_face_values(spec["path"], mesh.n_faces))
    return source_density(mesh, kind)


# -- outputs ------------------------------------------------------------------


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _clean(row):
    out = {}
    for k, v in row.items():
        if isinstance(v, (float, np.floating)) and not np.isfinite(v):
            out[k] = None
        else:
            out[k] = v
    return out


class MetricsWriter:
    """Line-delimited JSON: one header record, then one record per iteration."""

    def __init__(self, path, config, initial):
        self.path = Path(path)
        self.fh = open(self.path, "w", encoding="utf-8")
        self._write({"record": "header", "schema": METRICS_SCHEMA, "version": __version__,
                     "config": config, "initial": _clean(initial)})

    def _write(self, rec):
        self.fh.write(json.dumps(rec, default=_json_default, sort_keys=True) + "\n")
        self.fh.flush()

    def iteration(self, row):
        rec = {"record": "iteration"}
        rec.update({k: row[k] for k in REPORT_FIELDS})
        rec.update({k: v for k, v in row.items() if k not in rec})
        self._write(_clean(rec))

    def close(self):
        self.fh.close()


# -- subcommands ----------------------------------------------------------------


def _stage(stage, fn, *a, **kw):
    try:
        return fn(*a, **kw)
    except QCParamError as exc:
        if exc.stage is None:
            exc.stage = stage
        raise


def cmd_run(args):
    file_cfg = read_config(args.config) if args.config else {}
    base = Path(args.config).parent if args.config else None
    overrides = {"schedule": {}}
    for key in ("t1", "t2", "t3", "cap_k", "tau_fp", "tau_smooth"):
        val = getattr(args, key)
        if val is not None:
            overrides["schedule"][key] = val
    if args.iters is not None:
        overrides["schedule"]["iters"] = args.iters
    if args.mesh:
        overrides["mesh"] = os.path.abspath(args.mesh)
    if args.initial:
        overrides["initial"] = args.initial
    if args.constraint:
        overrides["constraint"] = args.constraint
    if args.svg_every is not None:
        overrides["output"] = {"svg_every": args.svg_every}
    cfg = resolve_config(file_cfg, overrides, base)
    target, schedule = validate_config(cfg)

    outdir = Path(args.output)
    try:
        outdir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise MeshIOError(f"cannot create {outdir}: {exc.strerror}", stage="output") from None

    mesh = _stage("load", load_mesh, cfg["mesh"])
    reference = _stage("config", build_reference, cfg["reference"], target)
    source = _stage("config", build_source, cfg["source"], mesh)
    if target.kind == "torus":
        state = _stage("initial_map", genus1_setup, mesh, reference, source, target.lattice)
    else:
        if cfg.get("chart"):
            chart_mesh = _stage("load", load_mesh, cfg["chart"])
            if not np.array_equal(chart_mesh.faces, mesh.faces):
                raise ValidationError("chart connectivity does not match the mesh", stage="load")
            chart = Embedding2D(mesh, chart_mesh.vertices[:, :2])
            _, f0 = _stage("initial_map", initial_map, mesh, target, cfg["initial"])
        else:
            chart, f0 = _stage("initial_map", initial_map, mesh, target, cfg["initial"])
        state = _stage("setup", make_state, mesh, chart, f0, source, reference, cfg["constraint"])

    svg_every = int(cfg["output"].get("svg_every") or 0)
    writer = MetricsWriter(outdir / cfg["output"]["metrics"], cfg,
                           _stage("evaluate", evaluate_map, state.embedding, state.chart,
                                  state.source, state.reference, state.graph,
                                  schedule.alpha, schedule.beta))
    if svg_every:
        write_svg(outdir / "frame_0000.svg", state.embedding)

    def on_iteration(k, st, row, info):
        writer.iteration({**row, "fallback": info.fallback, "backtracks": info.backtracks})
        if svg_every and k % svg_every == 0:
            mu = compute_beltrami(st.embedding, st.chart).magnitude
            write_svg(outdir / f"frame_{k:04d}.svg", st.embedding, mu, vmin=0.0, vmax=1.0)

    try:
        result = _stage("run", run, state, schedule, on_iteration=on_iteration)
    finally:
        writer.close()
    final = result.embedding
    save_mesh(outdir / cfg["output"]["mesh"], final.positions, final.mesh.faces,
              comment=f"qcparam {__version__} parameterization (best iterate {result.best_iter})")
    last_name = Path(cfg["output"]["mesh"])
    save_mesh(outdir / f"{last_name.stem}_last{last_name.suffix}", result.last.positions,
              final.mesh.faces, comment=f"qcparam {__version__} parameterization (last iterate)")
    with open(outdir / "config.resolved.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True, default=_json_default)
    summary = {"record": "summary", "iterations": len(result.report) - 1,
               "best_iter": result.best_iter, **_clean(result.report[result.best_iter])}
    print(json.dumps(summary, default=_json_default, sort_keys=True))
    return 0


def _embedding_for(mesh, path):
    verts, faces = read_arrays(path)
    if len(verts) != mesh.n_vertices or len(faces) != mesh.n_faces:
        raise ValidationError("embedding connectivity does not match the mesh", stage="load")
    if not np.array_equal(np.sort(faces, axis=1), np.sort(mesh.faces, axis=1)):
        raise ValidationError("embedding connectivity does not match the mesh", stage="load")
    return Embedding2D(mesh, verts[:, :2])


def cmd_evaluate(args):
    mesh = _stage("load", load_mesh, args.mesh)
    emb = _embedding_for(mesh, args.embedding)
    chart = _embedding_for(mesh, args.chart) if args.chart else _stage("chart", lscm, mesh)
    if args.source:
        source = source_density(mesh, "file", _read_face_values(args.source, mesh.n_faces))
    else:
        source = source_density(mesh)
    target = TargetDomain()
    if args.reference:
        spec = json.loads(args.reference)
        if spec.get("path"):
            spec["path"] = os.path.abspath(spec["path"])
        reference = build_reference(spec, target)
    else:
        reference = ReferenceDensity.uniform()
    if emb.flipped_count == 0:
        reference = reference.normalized(emb.corners)
    graph = DualGraph.from_geometry(mesh, chart.corners)
    rec = evaluate_map(emb, chart, source, reference, graph)
    rec = {"record": "evaluate", **_clean(rec),
           "mu_l2": float(np.sqrt(rec["mu_l2_sq"])), "grad_mu_l2": float(np.sqrt(rec["grad_mu_l2_sq"]))}
    print(json.dumps(rec, sort_keys=True, default=_json_default))
    return 0


def cmd_remesh(args):
    surface = _stage("load", load_mesh, args.surface)
    f1 = _embedding_for(surface, args.param)
    verts, faces = read_arrays(args.new_mesh)
    new_mesh = TriMesh(verts[:, :2], faces, validate=False)
    out = _stage("remesh", compose_remesh, f1, new_mesh)
    save_mesh(args.output, out.vertices, out.faces, comment="qcparam remeshed surface")
    print(json.dumps({"record": "remesh", "vertices": out.n_vertices, "faces": out.n_faces}))
    return 0


def cmd_render(args):
    verts, faces = read_arrays(args.mesh)
    mesh = TriMesh(verts[:, :2], faces, validate=False)
    emb = Embedding2D(mesh, verts[:, :2])
    values = None
    if args.color == "mu":
        if not args.chart:
            raise ValidationError("--color mu needs --chart", stage="render")
        cv, _ = read_arrays(args.chart)
        chart = Embedding2D(mesh, cv[:, :2])
        values = compute_beltrami(emb, chart).magnitude
        write_svg(args.output, emb, values, vmin=0.0, vmax=1.0)
        return 0
    if args.color == "density":
        if not args.surface:
            raise ValidationError("--color density needs --surface", stage="render")
        surf = load_mesh(args.surface)
        values = surf.face_areas / np.abs(emb.signed_areas)
    write_svg(args.output, emb, values)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="param", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="parameterize a mesh as configured")
    r.add_argument("-c", "--config", help="YAML or JSON run configuration")
    r.add_argument("-o", "--output", required=True, help="output directory")
    r.add_argument("--mesh", help="input mesh (overrides config)")
    r.add_argument("--iters", type=int)
    for key in ("t1", "t2", "t3", "cap_k", "tau_fp", "tau_smooth"):
        r.add_argument("--" + key.replace("_", "-"), dest=key, type=float)
    r.add_argument("--initial", choices=("harmonic", "lscm"))
    r.add_argument("--constraint", choices=("dirichlet", "landmark"))
    r.add_argument("--svg-every", type=int, help="write an SVG frame every N iterations")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("evaluate", help="energy terms of a given planar map")
    e.add_argument("--mesh", required=True, help="source surface mesh")
    e.add_argument("--embedding", required=True, help="planar map with the same connectivity")
    e.add_argument("--chart", help="conformal chart (default: least-squares conformal map)")
    e.add_argument("--source", help="per-face source density values (default: area)")
    e.add_argument("--reference", help='reference density as JSON, e.g. \'{"kind": "gaussian", "rate": 2}\'')
    e.set_defaults(func=cmd_evaluate)

    m = sub.add_parser("remesh", help="lift a planar mesh onto the surface")
    m.add_argument("--surface", required=True, help="original surface mesh")
    m.add_argument("--param", required=True, help="its parameterization (same connectivity)")
    m.add_argument("--new-mesh", required=True, help="planar mesh inside the parameter domain")
    m.add_argument("-o", "--output", required=True)
    m.set_defaults(func=cmd_remesh)

    d = sub.add_parser("render", help="SVG wireframe of a planar mesh")
    d.add_argument("--mesh", required=True)
    d.add_argument("-o", "--output", required=True)
    d.add_argument("--color", choices=("none", "mu", "density"), default="none")
    d.add_argument("--chart", help="chart for --color mu")
    d.add_argument("--surface", help="source surface for --color density")
    d.set_defaults(func=cmd_render)
    return p


def main(argv=None):
    setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except QCParamError as exc:
        print(json.dumps(exc.to_record(), default=_json_default, sort_keys=True), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        rec = {"error": "io", "message": str(exc), "exit_code": 4}
        print(json.dumps(rec), file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
