import numpy as np
import pytest

from qcparam.errors import MeshIOError, NonManifoldError, ParseError
from qcparam.generators import disk_mesh
from qcparam.meshio import load_mesh, read_arrays, save_mesh


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_single_triangle_off(tmp_path):
    p = write(tmp_path, "t.off", "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n")
    m = load_mesh(p)
    assert m.n_vertices == 3 and m.n_faces == 1
    assert m.total_area == pytest.approx(0.5, abs=1e-15)
    assert m.dim == 2


def test_unit_square_obj(tmp_path):
    p = write(tmp_path, "sq.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 3 4\n")
    m = load_mesh(p)
    assert (m.n_vertices, m.n_faces) == (4, 2)
    loops = m.boundary_loops
    assert len(loops) == 1 and len(loops[0]) == 4
    assert m.total_area == pytest.approx(1.0, abs=1e-15)


def test_obj_slash_indices_and_negative(tmp_path):
    p = write(tmp_path, "s.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf -3/1 -2/1 -1/1\n")
    assert load_mesh(p).n_faces == 1


def test_repeated_face_rejected(tmp_path):
    p = write(tmp_path, "r.off", "OFF\n3 2 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n3 0 1 2\n")
    with pytest.raises(NonManifoldError):
        load_mesh(p)


def test_clockwise_planar_mesh_is_reoriented(tmp_path):
    p = write(tmp_path, "cw.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 3 2\nf 1 4 3\n")
    m = load_mesh(p)
    assert m.total_area == pytest.approx(1.0)


def test_inconsistent_orientation_repaired(tmp_path):
    p = write(tmp_path, "mix.obj", "v 0 0 1\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3\nf 1 4 3\n")
    m = load_mesh(p)
    assert m.n_faces == 2
    assert len(m.boundary_loops) == 1


def test_parse_and_io_errors(tmp_path):
    with pytest.raises(ParseError):
        load_mesh(write(tmp_path, "a.off", "OFF\n3 1 0\n0 0 0\n1 0\n"))
    with pytest.raises(ParseError):
        load_mesh(write(tmp_path, "b.off", "NOFF\n3 1 0\n"))
    with pytest.raises(ParseError):
        load_mesh(write(tmp_path, "q.obj", "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"))
    with pytest.raises(ParseError):
        load_mesh(write(tmp_path, "x.obj", "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n"))
    with pytest.raises(ParseError):
        load_mesh(write(tmp_path, "e.obj", "v 0 0 0\n"))
    with pytest.raises(ParseError):
        load_mesh(write(tmp_path, "m.stl", "solid\n"))
    with pytest.raises(MeshIOError) as info:
        load_mesh(tmp_path / "missing.obj")
    assert info.value.exit_code == 4


@pytest.mark.parametrize("ext", ["obj", "off"])
def test_round_trip_exact(tmp_path, ext):
    m = disk_mesh(200, seed=5)
    p = tmp_path / f"m.{ext}"
    save_mesh(p, m.vertices, m.faces, comment="round trip")
    v, f = read_arrays(p)
    np.testing.assert_array_equal(v[:, :2], m.vertices)
    np.testing.assert_array_equal(f, m.faces)
    m2 = load_mesh(p)
    np.testing.assert_array_equal(m2.vertices, m.vertices)
