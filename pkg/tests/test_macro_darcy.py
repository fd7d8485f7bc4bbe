import numpy as np
import pytest

from memdarcy.cell_problems import MemoryKernel, build_kernel
from memdarcy.errors import KernelIncomplete
from memdarcy.geometry import build_cell_geometry, triangulate_cell
from memdarcy.io import read_table
from memdarcy.kinematics import MicrostructureEvolution, RadiusLaw, porosity_rate
from memdarcy.macro_darcy import (MacroMesh, MacroProblem, boundary_pressure, constant_force,
                                  general_divergence_source, interface_velocity, run_macro,
                                  step_macro, write_macro_outputs)


@pytest.fixture(scope="module")
def coarse_mesh():
    return triangulate_cell(build_cell_geometry(0.25), 0.2)


def synthetic_kernel(mesh, N, theta, theta_rate, memory=False):
    """Kernel Theta I / dt on the last interval only (no memory) or with a decaying tail."""
    ne = len(mesh.triangles)
    times = np.linspace(0.0, 1.0, N + 1)
    dt = times[1]
    K = np.full((N + 1, N + 1, ne, 2, 2), np.nan)
    for n in range(N + 1):
        for m in range(n + 1):
            if m == n - 1:
                K[m, n] = theta[n][:, None, None] * np.eye(2) / dt
            elif m == n:
                K[m, n] = theta[n][:, None, None] * np.eye(2)
            else:
                K[m, n] = (0.1 * np.eye(2) if memory else 0.0) * np.ones((ne, 1, 1))
    return MemoryKernel(times=times, macro_points=mesh.centroids, K=K,
                        a_in=np.zeros((N + 1, ne, 2)), theta=theta, theta_rate=theta_rate,
                        point_group=np.arange(ne))


def hand_darcy(mesh, coef, f, S, p_b):
    """Element-by-element P1 solve of -div(coef (f - grad p)) = S with p = p_b on the boundary."""
    nv = len(mesh.vertices)
    A = np.zeros((nv, nv))
    b = np.zeros(nv)
    for e, tri in enumerate(mesh.triangles):
        P = mesh.vertices[tri]
        M = np.c_[np.ones(3), P]
        grads = np.linalg.inv(M)[1:].T            # rows: gradient of each hat function
        area = 0.5 * abs(np.linalg.det(M))
        A[np.ix_(tri, tri)] += coef[e] * area * grads @ grads.T
        b[tri] += coef[e] * area * grads @ f + S[e] * area / 3
    bnd = mesh.boundary_nodes
    free = np.setdiff1d(np.arange(nv), bnd)
    p = np.zeros(nv)
    p[bnd] = p_b(mesh.vertices[bnd])
    p[free] = np.linalg.solve(A[np.ix_(free, free)], b[free] - A[np.ix_(free, bnd)] @ p[bnd])
    return p


def test_mesh_locate_and_p1_evaluation():
    mesh = MacroMesh.structured(4)
    assert np.array_equal(mesh.locate(mesh.centroids), np.arange(len(mesh.triangles)))
    assert mesh.areas.sum() == pytest.approx(1.0)
    lin = lambda x: 1 + 2 * x[:, 0] - 3 * x[:, 1]
    pts = np.random.default_rng(0).uniform(0, 1, (50, 2))
    assert np.allclose(mesh.evaluate_p1(lin(mesh.vertices), pts), lin(pts))


def test_static_zero_data_gives_zero_fields(coarse_mesh):
    ev = MicrostructureEvolution(RadiusLaw("constant", 0.25))
    mesh = MacroMesh.structured(2)
    kernel = build_kernel(ev, mesh.centroids, coarse_mesh, np.linspace(0, 1, 4))
    field = run_macro(MacroProblem(mesh, kernel, force=constant_force((0, 0)),
                                   p_b=boundary_pressure("zero")))
    assert np.abs(field.pressure[1:]).max() == 0.0
    assert np.abs(field.velocity).max() == 0.0


def test_no_memory_reduces_to_classical_darcy():
    mesh = MacroMesh.structured(4)
    ne = len(mesh.triangles)
    rng = np.random.default_rng(7)
    N = 3
    theta = rng.uniform(0.5, 0.9, (N + 1, ne))
    rate = rng.uniform(-0.2, 0.2, (N + 1, ne))
    kernel = synthetic_kernel(mesh, N, theta, rate)
    f = np.array([0.3, -0.2])
    mu = 2.0
    p_b = boundary_pressure("linear")
    field = run_macro(MacroProblem(mesh, kernel, mu=mu, force=constant_force(f), p_b=p_b))
    for n in range(1, N + 1):
        p_ref = hand_darcy(mesh, theta[n] / mu, f, -rate[n], p_b)
        assert np.abs(field.pressure[n] - p_ref).max() < 1e-10
        assert field.flux_balance[n] < 1e-10


def test_memory_tail_changes_solution_and_keeps_balance():
    mesh = MacroMesh.structured(3)
    ne = len(mesh.triangles)
    N = 3
    theta = np.full((N + 1, ne), 0.8)
    rate = np.zeros((N + 1, ne))
    plain = run_macro(MacroProblem(mesh, synthetic_kernel(mesh, N, theta, rate),
                                   force=constant_force((1.0, 0.0))))
    memo = run_macro(MacroProblem(mesh, synthetic_kernel(mesh, N, theta, rate, memory=True),
                                  force=constant_force((1.0, 0.0))))
    assert np.abs(memo.velocity[N] - plain.velocity[N]).max() > 1e-3
    assert memo.flux_balance[1:].max() < 1e-10


def test_missing_kernel_entries_refused():
    mesh = MacroMesh.structured(2)
    ne = len(mesh.triangles)
    kernel = synthetic_kernel(mesh, 2, np.full((3, ne), 0.8), np.zeros((3, ne)))
    kernel.K[0, 2] = np.nan
    problem = MacroProblem(mesh, kernel)
    step_macro(problem, np.zeros((3, ne, 2)), 1)
    with pytest.raises(KernelIncomplete):
        step_macro(problem, np.zeros((3, ne, 2)), 2)


def test_first_order_time_convergence(coarse_mesh):
    ev = MicrostructureEvolution(RadiusLaw("linear", 0.25, 0.05))
    mesh = MacroMesh.structured(2)
    final = {}
    for N in (4, 8, 16, 64):
        kernel = build_kernel(ev, mesh.centroids, coarse_mesh, np.linspace(0, 1, N + 1))
        field = run_macro(MacroProblem(mesh, kernel, force=constant_force((1.0, 0.5))))
        final[N] = field.pressure[-1]
    err = [np.abs(final[N] - final[64]).max() for N in (4, 8, 16)]
    slopes = np.log2(np.array(err[:-1]) / np.array(err[1:]))
    assert np.all(slopes >= 0.8)


@pytest.mark.parametrize("t", [0.0, 0.5, 1.0])
def test_general_source_reduces_to_porosity_rate(t):
    ev = MicrostructureEvolution(RadiusLaw("linear", 0.25, -0.05))
    x = (0.4, 0.6)
    value = general_divergence_source(interface_velocity(ev, t, x), ev, t, x)
    assert value == pytest.approx(-porosity_rate(ev, t, x), abs=1e-4)


def test_general_source_trivial_cases():
    ev = MicrostructureEvolution(RadiusLaw("linear", 0.25, 0.05))
    zero = lambda p: np.zeros_like(p)
    rigid = lambda p: np.tile([0.3, -1.2], (len(p), 1))
    assert general_divergence_source(zero, ev, 0.5, (0.5, 0.5)) == 0.0
    assert abs(general_divergence_source(rigid, ev, 0.5, (0.5, 0.5))) < 1e-12


def test_outputs_round_trip(tmp_path, coarse_mesh):
    ev = MicrostructureEvolution(RadiusLaw("linear", 0.25, -0.05))
    mesh = MacroMesh.structured(2)
    kernel = build_kernel(ev, mesh.centroids, coarse_mesh, np.linspace(0, 1, 3))
    field = run_macro(MacroProblem(mesh, kernel))
    write_macro_outputs(tmp_path, mesh, field, "hash123", emit_vtk=True)
    meta, cols, rows = read_table(tmp_path / "macro_pressure.csv", {"scenario": "hash123"})
    assert cols == ["t_index", "node_index", "p"]
    p = np.array([float(r[2]) for r in rows]).reshape(2, -1)
    assert np.array_equal(p, field.pressure[1:])
    _, _, rows = read_table(tmp_path / "macro_velocity.csv")
    v = np.array([[float(r[2]), float(r[3])] for r in rows]).reshape(field.velocity.shape)
    assert np.array_equal(v, field.velocity)
    _, _, rows = read_table(tmp_path / "mass_balance.csv")
    assert len(rows) == 2
    assert (tmp_path / "macro_0002.vtk").exists()
