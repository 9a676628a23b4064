import numpy as np
import pytest

from qcparam.beltrami_flow import DualGraph
from qcparam.driver import (
    EQUILATERAL,
    Schedule,
    TargetDomain,
    compose_remesh,
    equilateral_beltrami,
    evaluate_map,
    genus1_run,
    genus1_setup,
    improve_mesh,
    initial_map,
    load_checkpoint,
    make_state,
    periodicity_defect,
    run,
    run_iteration,
    source_density,
)
from qcparam.errors import OutsideDomainError, TopologyError, ValidationError
from qcparam.generators import bad_mesh, bumpy_disk, disk_mesh, flat_torus, grid_mesh, ring_torus, spherical_cap
from qcparam.measure import ReferenceDensity, pushforward_density, relative_entropy
from qcparam.mesh import Embedding2D, TriMesh, triangle_quality
from qcparam.qc import compute_beltrami
from qcparam.transport import FlowParams, transport_apply

from conftest import octahedron

GAUSS = ReferenceDensity.gaussian(rate=2.0)


@pytest.fixture(scope="module")
def disk_state():
    m = disk_mesh(500, seed=4)
    chart, f0 = initial_map(m)
    return make_state(m, chart, f0, source_density(m), GAUSS)


def test_target_domain_validation():
    assert TargetDomain.from_dict({"kind": "rectangle", "width": 2, "origin": [1, 1]}).origin == (1.0, 1.0)
    for bad in ({"kind": "sphere"}, {"kind": "disk", "radius": 0}, {"kind": "rectangle", "width": -1},
                {"kind": "torus", "lattice": ((1, 0), (2, 0))}):
        with pytest.raises(ValidationError):
            TargetDomain.from_dict(bad)


def test_schedule_validation_and_lookup():
    seq = [FlowParams(t1=0.1), FlowParams(t1=0.2)]
    s = Schedule(seq)
    assert s.params_for(1).t1 == 0.1 and s.params_for(5).t1 == 0.2
    assert Schedule(lambda k: FlowParams(t1=k / 10)).params_for(3).t1 == pytest.approx(0.3)
    for bad in (dict(max_iter=-1), dict(alpha=-1), dict(patience=0)):
        with pytest.raises(ValidationError):
            Schedule(**bad)


def test_source_density_kinds():
    m = grid_mesh(3, 3)
    d = source_density(m, "values", np.arange(1, m.n_faces + 1))
    assert d.total_mass == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        source_density(m, "values", np.ones(3))
    with pytest.raises(ValidationError):
        source_density(m, "magic")


def test_initial_map_of_unit_square_is_identity():
    m = grid_mesh(8, 8)
    chart, f0 = initial_map(m, TargetDomain("rectangle"))
    assert f0.positions.min() == pytest.approx(0) and f0.positions.max() == pytest.approx(1)
    # a rigid motion of the identity: orthogonal Procrustes fit
    a = m.vertices - m.vertices.mean(axis=0)
    b = f0.positions - f0.positions.mean(axis=0)
    u, _, vt = np.linalg.svd(a.T @ b)
    R = u @ vt
    assert np.linalg.det(R) > 0
    np.testing.assert_allclose(a @ R, b, atol=1e-8)
    # the chart is a similarity of the square
    mu = compute_beltrami(chart, Embedding2D(m, m.vertices))
    assert mu.max_abs <= 1e-10


def test_lscm_mode_on_flat_mesh_is_conformal():
    m = disk_mesh(300, seed=3)
    chart, f0 = initial_map(m, mode="lscm")
    mu = compute_beltrami(f0, Embedding2D(m, m.vertices))
    assert mu.max_abs <= 1e-10


def test_hemisphere_harmonic_map_has_no_flips():
    cap = spherical_cap(disk_mesh(800, seed=2))
    chart, f0 = initial_map(cap, TargetDomain("disk"))
    assert f0.flipped_count == 0 and chart.flipped_count == 0
    b = cap.boundary_vertices
    np.testing.assert_allclose(np.linalg.norm(f0.positions[b], axis=1), 1.0, atol=1e-12)


def test_initial_map_topology_errors():
    with pytest.raises(TopologyError):
        initial_map(octahedron())
    with pytest.raises(ValidationError):
        initial_map(grid_mesh(3, 3), TargetDomain("torus"))


def test_zero_durations_reproduce_map(disk_state):
    p = FlowParams(t1=0.0, t2=0.0, t3=0.0, cap_k=0.99)
    st, row, info = run_iteration(disk_state, p)
    assert info.substeps == 0 and not info.fallback
    np.testing.assert_allclose(st.embedding.positions, disk_state.embedding.positions, atol=1e-8)
    assert row["flips"] == 0


def test_large_shrink_gives_harmonic_map(disk_state):
    mu0 = compute_beltrami(disk_state.embedding, disk_state.chart).l2_sq(disk_state.chart.signed_areas)
    st, row, _ = run_iteration(disk_state, FlowParams(t1=0.0, t2=20.0))
    assert row["mu_l2_sq"] <= 1e-12 * max(mu0, 1)
    # boundary held, interior harmonic with respect to the chart's conformal structure
    b = disk_state.mesh.boundary_vertices
    np.testing.assert_array_equal(st.embedding.positions[b], disk_state.embedding.positions[b])


def test_moderate_shrink_follows_exponential_law(disk_state):
    mu = compute_beltrami(disk_state.embedding, disk_state.chart)
    a = disk_state.chart.signed_areas
    _, row, _ = run_iteration(disk_state, FlowParams(t1=0.0, t2=0.5))
    assert np.sqrt(row["mu_l2_sq"]) == pytest.approx(np.exp(-0.5) * np.sqrt(mu.l2_sq(a)), rel=0.05)


def test_matched_densities_are_a_fixed_point():
    m = grid_mesh(10, 10)
    chart, f0 = initial_map(m, TargetDomain("rectangle"))
    state = make_state(m, chart, f0, source_density(m), ReferenceDensity.uniform())
    st, row, _ = run_iteration(state, FlowParams(t1=0.01))
    np.testing.assert_allclose(st.embedding.positions, f0.positions, atol=1e-8)
    assert abs(row["H"]) <= 1e-10


def test_uniform_problem_stops_early():
    m = grid_mesh(10, 10)
    chart, f0 = initial_map(m, TargetDomain("rectangle"))
    state = make_state(m, chart, f0, source_density(m), ReferenceDensity.uniform())
    res = run(state, Schedule(FlowParams(t1=0.01), max_iter=50))
    assert len(res.report.iterations) == 3
    np.testing.assert_allclose(res.embedding.positions, f0.positions, atol=1e-8)


def test_run_reduces_entropy_without_flips(disk_state, tmp_path):
    seen = []
    res = run(disk_state, Schedule(FlowParams(t1=0.0015), max_iter=8, patience=None),
              on_iteration=lambda k, st, row, info: seen.append(row["flips"]),
              checkpoint_dir=tmp_path)
    H = res.report.column("H")
    assert len(H) == 9 and H[-1] < H[0]
    assert np.all(np.diff(H) < 0)
    assert seen == [0] * 8
    assert res.last.flipped_count == 0
    assert res.report.rows[res.best_iter]["E"] == min(res.report.column("E"))
    resumed = load_checkpoint(tmp_path / "iter_0008.npz", disk_state)
    np.testing.assert_array_equal(resumed.embedding.positions, res.last.positions)


def test_lbs_step_stays_close_to_transport(disk_state):
    p = FlowParams(t1=0.0015, cap_k=1 - 1e-9)
    tr = transport_apply(disk_state.embedding, disk_state.source, disk_state.reference, p.t1, p,
                         frozen=disk_state.frozen)
    H_tr = relative_entropy(pushforward_density(disk_state.source, tr.embedding), tr.embedding,
                            disk_state.reference)
    _, row, _ = run_iteration(disk_state, p)
    assert abs(row["H"] - H_tr) <= 0.05 * abs(H_tr)


def test_evaluate_map_reports_flips():
    m = grid_mesh(4, 4)
    chart = Embedding2D(m, m.vertices)
    g = DualGraph.from_geometry(m)
    src = source_density(m)
    row = evaluate_map(chart, chart, src, ReferenceDensity.uniform(), g)
    assert row["H"] == pytest.approx(0, abs=1e-14) and row["mu_l2_sq"] == 0 and row["flips"] == 0
    refl = Embedding2D(m, m.vertices * [-1, 1])
    row = evaluate_map(refl, chart, src, ReferenceDensity.uniform(), g)
    assert row["flips"] == m.n_faces and np.isnan(row["H"])


def test_equilateral_beltrami_examples():
    eq = Embedding2D(TriMesh(EQUILATERAL, [[0, 1, 2]]), EQUILATERAL)
    assert abs(equilateral_beltrami(eq).values[0]) <= 1e-15
    right = TriMesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]])
    mu = equilateral_beltrami(Embedding2D(right, right.vertices))
    assert abs(mu.values[0]) == pytest.approx(2 - np.sqrt(3), abs=1e-14)


def test_improve_mesh_raises_quality():
    m = bad_mesh()
    out = improve_mesh(m)
    assert triangle_quality(out.corners()).mean() > triangle_quality(m.corners()).mean()
    with pytest.raises(ValidationError):
        improve_mesh(bumpy_disk(200))


def test_genus1_uniform_is_identity():
    m = flat_torus(8, 8)
    state = genus1_setup(m, ReferenceDensity.uniform())
    res = run(state, Schedule(FlowParams(t1=0.005), max_iter=3, patience=None))
    np.testing.assert_allclose(res.last.positions, state.embedding.positions, atol=1e-8)
    assert periodicity_defect(state.cut, res.last) <= 1e-10


def test_genus1_periodicity_every_iteration():
    m = flat_torus(10, 10)
    defects = []
    res = genus1_run(m, ReferenceDensity.cosine(0.5), Schedule(FlowParams(t1=0.005), max_iter=5, patience=None),
                     on_iteration=lambda k, st, row, info: defects.append(periodicity_defect(st.cut, st.embedding)))
    assert max(defects) <= 1e-10
    H = res.report.column("H")
    assert H[-1] < H[0]


def test_genus1_embedded_torus_nonuniform_source():
    m = ring_torus(16, 10)
    # area density of the ring torus is not uniform in the flat chart
    res = genus1_run(m, ReferenceDensity.uniform(), Schedule(FlowParams(t1=0.005), max_iter=6, patience=None))
    H = res.report.column("H")
    assert H[-1] < H[0]
    assert res.last.flipped_count == 0


def test_genus1_wrong_genus():
    with pytest.raises(TopologyError):
        genus1_setup(octahedron(), ReferenceDensity.uniform())


def test_compose_remesh_identity_and_centroid():
    surf = bumpy_disk(300, seed=1)
    chart, f0 = initial_map(surf)
    back = compose_remesh(f0, f0.as_mesh())
    np.testing.assert_allclose(back.vertices, surf.vertices, atol=1e-12)
    c = f0.corners.mean(axis=1)[[0, 5]]
    q = TriMesh(np.r_[c, [[c[0, 0] + 1e-3, c[0, 1]]]], [[0, 1, 2]], validate=False)
    out = compose_remesh(f0, q)
    np.testing.assert_allclose(out.vertices[:2], surf.corners()[[0, 5]].mean(axis=1), atol=1e-12)
    big = TriMesh(np.array([[0, 0], [2, 0], [0, 2.0]]), [[0, 1, 2]])
    with pytest.raises(OutsideDomainError) as info:
        compose_remesh(f0, big)
    assert info.value.details["indices"] == [1, 2]


def test_remesh_on_area_preserving_map_equalizes_areas():
    surf = bumpy_disk(1500, amplitude=0.6, seed=3)
    chart, f0 = initial_map(surf)
    state = make_state(surf, chart, f0, source_density(surf), ReferenceDensity.uniform())
    res = run(state, Schedule(FlowParams(t1=0.005, tau_fp=0.0005), max_iter=20, patience=None))
    f1 = res.last
    uniform = disk_mesh(1200, radius=0.99, jitter=0.0, seed=0)
    new = compose_remesh(f1, uniform)

    def cv(m):
        a = m.face_areas
        return a.std() / a.mean()

    assert cv(new) < cv(surf)
    # the harmonic initial map alone does not equalize areas
    assert cv(new) < 0.5 * cv(compose_remesh(f0, uniform))
