import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from qcparam.cli import METRICS_SCHEMA, main
from qcparam.driver import REPORT_FIELDS, initial_map
from qcparam.generators import disk_mesh, grid_mesh
from qcparam.meshio import load_mesh, read_arrays, save_mesh
from qcparam.qc import Constraint, assemble, compute_beltrami, solve_lbs


@pytest.fixture(scope="module")
def disk_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    m = disk_mesh(400, seed=8)
    path = d / "disk.obj"
    save_mesh(path, m.vertices, m.faces)
    return path


def write_config(path, mesh, **schedule):
    cfg = {
        "mesh": str(mesh),
        "target": {"kind": "disk", "radius": 1.0},
        "reference": {"kind": "gaussian", "rate": 2.0},
        "schedule": {"t1": 0.0015, "iters": 50, **schedule},
    }
    path.write_text(yaml.safe_dump(cfg))
    return path


def read_metrics(path):
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    return recs[0], recs[1:]


def test_run_writes_fifty_records(tmp_path, disk_file, capsys):
    cfg = write_config(tmp_path / "run.yaml", disk_file, patience=0)
    out = tmp_path / "out"
    assert main(["run", "-c", str(cfg), "-o", str(out), "--svg-every", "25"]) == 0
    header, rows = read_metrics(out / "metrics.jsonl")
    assert header["schema"] == METRICS_SCHEMA
    assert header["config"]["schedule"]["t1"] == 0.0015
    assert len(rows) == 50
    for r in rows:
        assert set(REPORT_FIELDS) <= set(r)
        assert r["flips"] == 0
    H = [header["initial"]["H"]] + [r["H"] for r in rows]
    assert H[-1] < 0.5 * H[0]
    assert sum(b > a for a, b in zip(H, H[1:])) <= 1
    for name in ("param.obj", "param_last.obj", "config.resolved.json", "frame_0000.svg",
                 "frame_0025.svg", "frame_0050.svg"):
        assert (out / name).exists()
    summary = json.loads(capsys.readouterr().out)
    assert summary["record"] == "summary" and summary["iterations"] == 50
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["schedule"]["patience"] == 0


def test_flags_override_config(tmp_path, disk_file):
    cfg = write_config(tmp_path / "run.yaml", disk_file)
    out = tmp_path / "o"
    assert main(["run", "-c", str(cfg), "-o", str(out), "--iters", "2", "--t1", "0.001"]) == 0
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["schedule"]["iters"] == 2 and resolved["schedule"]["t1"] == 0.001


def test_cap_one_is_rejected_before_compute(tmp_path, disk_file, capsys):
    cfg = write_config(tmp_path / "bad.yaml", disk_file, cap_k=1.0)
    out = tmp_path / "never"
    assert main(["run", "-c", str(cfg), "-o", str(out)]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "validation" and err["stage"] == "config"
    assert not out.exists()


def test_missing_mesh_is_validation_error(tmp_path, capsys):
    cfg = write_config(tmp_path / "bad.yaml", tmp_path / "nope.obj")
    assert main(["run", "-c", str(cfg), "-o", str(tmp_path / "x")]) == 2


def test_zero_durations_give_lbs_round_trip(tmp_path, disk_file):
    cfg = write_config(tmp_path / "zero.yaml", disk_file, t1=0.0, t2=0.0, t3=0.0, iters=3)
    out = tmp_path / "z"
    assert main(["run", "-c", str(cfg), "-o", str(out)]) == 0
    m = load_mesh(disk_file)
    chart, f0 = initial_map(m)
    mu = compute_beltrami(f0, chart)
    expect = solve_lbs(assemble(chart, mu), Constraint.boundary_of(f0)).positions
    for name in ("param.obj", "param_last.obj"):
        v, _ = read_arrays(out / name)
        np.testing.assert_allclose(v[:, :2], expect, atol=1e-8)


def make_square(tmp_path):
    m = grid_mesh(6, 6)
    save_mesh(tmp_path / "sq.obj", m.vertices, m.faces)
    return m


def evaluate(tmp_path, capsys, m, positions, extra=()):
    save_mesh(tmp_path / "emb.obj", positions, m.faces)
    code = main(["evaluate", "--mesh", str(tmp_path / "sq.obj"), "--embedding",
                 str(tmp_path / "emb.obj"), *extra])
    return code, json.loads(capsys.readouterr().out)


def test_evaluate_identity_shear_reflection(tmp_path, capsys):
    m = make_square(tmp_path)
    code, rec = evaluate(tmp_path, capsys, m, m.vertices)
    assert code == 0
    assert abs(rec["H"]) <= 1e-12 and rec["mu_l2"] <= 1e-12 and rec["flips"] == 0
    shear = np.column_stack([m.vertices[:, 0] + m.vertices[:, 1], m.vertices[:, 1]])
    save_mesh(tmp_path / "chart.obj", m.vertices, m.faces)
    code, rec = evaluate(tmp_path, capsys, m, shear, ["--chart", str(tmp_path / "chart.obj")])
    assert rec["mu_l2_sq"] == pytest.approx(0.2 * m.total_area, rel=1e-12)
    assert rec["mu_max"] == pytest.approx(1 / np.sqrt(5), rel=1e-12)
    code, rec = evaluate(tmp_path, capsys, m, m.vertices * [-1, 1])
    assert code == 0 and rec["flips"] == m.n_faces and rec["H"] is None


def test_evaluate_connectivity_mismatch(tmp_path, capsys):
    make_square(tmp_path)
    other = grid_mesh(3, 3)
    save_mesh(tmp_path / "o.obj", other.vertices, other.faces)
    code = main(["evaluate", "--mesh", str(tmp_path / "sq.obj"), "--embedding", str(tmp_path / "o.obj")])
    assert code == 2


def test_remesh_round_trip_and_errors(tmp_path, capsys):
    surf = disk_mesh(300, seed=2)
    v3 = np.column_stack([surf.vertices, 0.3 * (1 - (surf.vertices**2).sum(axis=1))])
    save_mesh(tmp_path / "surf.obj", v3, surf.faces)
    s = load_mesh(tmp_path / "surf.obj")
    _, f0 = initial_map(s)
    save_mesh(tmp_path / "param.obj", f0.positions, s.faces)
    args = ["remesh", "--surface", str(tmp_path / "surf.obj"), "--param", str(tmp_path / "param.obj")]
    assert main(args + ["--new-mesh", str(tmp_path / "param.obj"), "-o", str(tmp_path / "back.obj")]) == 0
    back, _ = read_arrays(tmp_path / "back.obj")
    np.testing.assert_allclose(back, v3, atol=1e-12)

    coarse = disk_mesh(100, radius=0.98, jitter=0.0)
    save_mesh(tmp_path / "coarse.obj", coarse.vertices, coarse.faces)
    assert main(args + ["--new-mesh", str(tmp_path / "coarse.obj"), "-o", str(tmp_path / "c.obj")]) == 0
    out = load_mesh(tmp_path / "c.obj")
    assert out.n_faces == coarse.n_faces and out.dim == 3

    big = disk_mesh(100, radius=1.5)
    save_mesh(tmp_path / "big.obj", big.vertices, big.faces)
    capsys.readouterr()
    assert main(args + ["--new-mesh", str(tmp_path / "big.obj"), "-o", str(tmp_path / "b.obj")]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "outside_domain" and len(err["indices"]) > 0

    assert main(args + ["--new-mesh", str(tmp_path / "missing.obj"), "-o", str(tmp_path / "b.obj")]) == 4
    assert main(args + ["--new-mesh", str(tmp_path / "param.obj"),
                        "-o", str(tmp_path / "no" / "such" / "dir.obj")]) == 4


def test_render_subcommand(tmp_path):
    m = make_square(tmp_path)
    shear = np.column_stack([m.vertices[:, 0] + 0.5 * m.vertices[:, 1], m.vertices[:, 1]])
    save_mesh(tmp_path / "shear.obj", shear, m.faces)
    assert main(["render", "--mesh", str(tmp_path / "shear.obj"), "-o", str(tmp_path / "a.svg"),
                 "--color", "mu", "--chart", str(tmp_path / "sq.obj")]) == 0
    assert main(["render", "--mesh", str(tmp_path / "shear.obj"), "-o", str(tmp_path / "b.svg"),
                 "--color", "density", "--surface", str(tmp_path / "sq.obj")]) == 0
    assert (tmp_path / "a.svg").read_text().count("<polygon") == m.n_faces
    assert main(["render", "--mesh", str(tmp_path / "shear.obj"), "-o", str(tmp_path / "c.svg"),
                 "--color", "mu"]) == 2


def test_console_script_entry_point(tmp_path):
    make_square(tmp_path)
    r = subprocess.run([sys.executable, "-m", "qcparam.cli", "evaluate", "--mesh", str(tmp_path / "sq.obj"),
                        "--embedding", str(tmp_path / "sq.obj")], capture_output=True, text=True)
    assert r.returncode == 0
    assert json.loads(r.stdout)["flips"] == 0
