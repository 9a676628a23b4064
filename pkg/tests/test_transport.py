import numpy as np
import pytest

from qcparam.errors import ValidationError
from qcparam.generators import disk_mesh, grid_mesh
from qcparam.measure import (
    FaceDensity,
    ReferenceDensity,
    integrate,
    pushforward_density,
    relative_entropy,
)
from qcparam.mesh import Embedding2D
from qcparam.transport import FlowParams, n_substeps, transport_apply, velocity_field

DISK = disk_mesh(600, seed=5)
EMB = Embedding2D(DISK, DISK.vertices)
SRC = FaceDensity.uniform(DISK.face_areas)
GAUSS = ReferenceDensity.gaussian(rate=2.0).normalized(DISK.corners())


def test_flow_params_validation():
    p = FlowParams(t1=0.01)
    assert p.tau_fp == pytest.approx(0.001)
    for bad in (dict(t1=-1), dict(cap_k=1.0), dict(cap_k=-0.1), dict(t1=0.01, tau_fp=0.02),
                dict(t3=0.01, tau_smooth=0.1), dict(max_backtracks=-1),
                dict(boundary_density="cubic")):
        with pytest.raises(ValidationError):
            FlowParams(**bad)


def test_n_substeps():
    assert n_substeps(0, 0.1) == 0
    assert n_substeps(0.0015, 0.00015) == 10
    assert n_substeps(0.25, 0.1) == 3


def test_velocity_uniform_constant_potential_is_zero():
    v = velocity_field(SRC, EMB, ReferenceDensity.uniform())
    np.testing.assert_allclose(v, 0.0, atol=1e-9)


@pytest.mark.parametrize("boundary", ["average", "linear"])
def test_velocity_uniform_density_quadratic_potential(boundary):
    v = velocity_field(SRC, EMB, ReferenceDensity.gaussian(rate=1.0), boundary=boundary)
    inner = ~DISK.is_boundary_vertex
    np.testing.assert_allclose(v[inner], -2.0 * DISK.vertices[inner], atol=1e-9)


def test_matched_density_velocity_is_first_order():
    ref = ReferenceDensity.gaussian(center=(0.5, 0.5), rate=1.0)
    worst = []
    for n in (16, 32, 64):
        m = grid_mesh(n, n)
        emb = Embedding2D(m, m.vertices)
        cell = integrate(ref.density, m.corners(), levels=1) / m.face_areas
        d = FaceDensity.normalized(cell, m.face_areas)
        v = velocity_field(d, emb, ref)
        worst.append(np.abs(v[~m.is_boundary_vertex]).max())
    assert worst[0] / worst[1] > 1.6
    assert worst[1] / worst[2] > 1.6
    assert worst[-1] < 0.05


def test_zero_duration_is_identity():
    r = transport_apply(EMB, SRC, GAUSS, 0.0, FlowParams())
    assert r.embedding is EMB and r.completed and r.substeps == 0


def test_matched_uniform_state_is_stationary():
    r = transport_apply(EMB, SRC, ReferenceDensity.uniform(), 0.01, FlowParams(t1=0.01),
                        frozen=DISK.is_boundary_vertex)
    np.testing.assert_allclose(r.embedding.positions, EMB.positions, atol=1e-10)


def test_transport_reduces_entropy_and_conserves_mass():
    masses, entropies, flips = [], [], []

    def watch(emb, dens):
        masses.append(float(np.dot(dens.values, dens.areas)))
        entropies.append(relative_entropy(dens, emb, GAUSS))
        flips.append(emb.flipped_count)

    H0 = relative_entropy(pushforward_density(SRC, EMB), EMB, GAUSS)
    params = FlowParams(t1=0.0015)
    r = transport_apply(EMB, SRC, GAUSS, 0.015, params, frozen=DISK.is_boundary_vertex,
                        on_substep=watch)
    assert r.completed and r.substeps == 100
    assert r.elapsed == pytest.approx(0.015)
    assert max(abs(m - 1.0) for m in masses) <= 1e-12
    assert max(flips) == 0
    H = np.r_[H0, entropies]
    assert np.all(np.diff(H) < 0)
    b = DISK.boundary_vertices
    np.testing.assert_array_equal(r.embedding.positions[b], EMB.positions[b])


def test_last_substep_is_shortened():
    r = transport_apply(EMB, SRC, GAUSS, 0.0025, FlowParams(t1=0.0025, tau_fp=0.001),
                        frozen=DISK.is_boundary_vertex)
    assert r.substeps == 3
    assert r.elapsed == pytest.approx(0.0025, abs=1e-15)


def test_backtracking_exhaustion_returns_last_valid_map():
    params = FlowParams(t1=50.0, tau_fp=50.0, max_backtracks=0)
    r = transport_apply(EMB, SRC, GAUSS, 50.0, params, frozen=DISK.is_boundary_vertex)
    assert not r.completed
    assert r.embedding.flipped_count == 0
    np.testing.assert_array_equal(r.embedding.positions, EMB.positions)


def test_backtracking_halves_step():
    params = FlowParams(t1=2.0, tau_fp=2.0, max_backtracks=20)
    r = transport_apply(EMB, SRC, GAUSS, 2.0, params, frozen=DISK.is_boundary_vertex)
    assert r.backtracks > 0
    assert r.embedding.flipped_count == 0
