import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import eigsh

from memdarcy.errors import SolverBreakdown
from memdarcy.geometry import build_cell_geometry, tile_epsilon_domain, triangulate_cell
from memdarcy.kinematics import MicrostructureEvolution, RadiusLaw
from memdarcy.stokes_fem import (SaddleSolver, assemble_operators, cell_space,
                                 dirichlet_square_space, divergence_matrix, epsilon_space,
                                 estimate_korn_constant, estimate_poincare_constant, load_vector,
                                 pressure_mean_row, solve_saddle, step_instationary, vector_mass,
                                 viscous_matrix)
from memdarcy.stokes_fem.assembly import mass_rate, transport_matrix
from memdarcy.stokes_fem.direct import edge_normal_flux, outer_edges, solve_direct_epsilon
from memdarcy.stokes_fem.elements import QUAD_POINTS, QUAD_WEIGHTS, refined_rule


def moving_jac(space, t=0.5, a=0.05):
    ev = MicrostructureEvolution(RadiusLaw("linear", 0.25, a))
    pts, _ = space.quadrature()
    return ev.jacobians(t, (0.5, 0.5), pts.reshape(-1, 2))


@pytest.fixture(scope="module")
def cspace():
    return cell_space(triangulate_cell(build_cell_geometry(0.25), 0.2))


def test_quadrature_rules_integrate_polynomials():
    assert QUAD_WEIGHTS.sum() == pytest.approx(1.0)
    # degree 5 monomial on the reference triangle: int x^3 y^2 = 3! 2! / 7!
    f = QUAD_POINTS[:, 0] ** 3 * QUAD_POINTS[:, 1] ** 2
    assert 0.5 * QUAD_WEIGHTS @ f == pytest.approx(6 * 2 / 5040, rel=1e-12)
    pts, w = refined_rule(2)
    assert w.sum() == pytest.approx(1.0)
    assert 0.5 * w @ (pts[:, 0] ** 3 * pts[:, 1] ** 2) == pytest.approx(12 / 5040, rel=1e-12)


def test_identity_map_reduces_to_standard_operators(cspace):
    ev = MicrostructureEvolution(RadiusLaw("constant", 0.25))
    pts, _ = cspace.quadrature()
    jac = ev.jacobians(0.0, (0.5, 0.5), pts.reshape(-1, 2))
    ops = assemble_operators(cspace, jac)
    assert abs(ops.M - vector_mass(cspace, None)).max() < 1e-13
    assert abs(ops.A1 - viscous_matrix(cspace, None, 1.0, symmetric=True)).max() < 1e-12
    assert abs(ops.A2).max() < 1e-13


def test_mass_symmetric_positive_definite(cspace):
    M = vector_mass(cspace, moving_jac(cspace))
    assert abs(M - M.T).max() < 1e-12
    lam = eigsh(M.tocsc(), k=1, sigma=0.0, which="LM", return_eigenvectors=False)
    assert lam[0] > 0


def test_viscous_form_symmetric_semidefinite(cspace):
    A1 = viscous_matrix(cspace, moving_jac(cspace), 1.0, symmetric=True)
    assert abs(A1 - A1.T).max() < 1e-10
    rng = np.random.default_rng(0)
    v = rng.standard_normal(cspace.n_velocity)
    assert v @ (A1 @ v) >= -1e-12


def test_transport_energy_identity(cell_mesh_coarse, cell_mesh_fine):
    """v.Cv = -v.Mdot v / 2 for fields vanishing on the interface (up to quadrature error).

    This makes the step (M v)_t + (A1 + C) v dissipative: the kinetic energy changes
    only through the viscous form.
    """
    def field(p):
        z = p - 0.5
        f = (z**2).sum(1) - 0.25**2
        return np.c_[f * np.sin(2 * np.pi * p[:, 0]), f * np.cos(2 * np.pi * p[:, 1]) + f]

    gaps = []
    for mesh in (cell_mesh_coarse, cell_mesh_fine):
        space = cell_space(mesh)
        jac = moving_jac(space)
        v = space.interpolate_velocity(field)
        v[space.dirichlet_dofs()] = 0.0
        md = v @ (mass_rate(space, jac) @ v)
        gaps.append(abs(2 * v @ (transport_matrix(space, jac) @ v) + md) / abs(md))
    assert gaps[1] < gaps[0]
    assert gaps[1] < 1e-3


def test_mass_rate_matches_finite_difference(cspace):
    ev = MicrostructureEvolution(RadiusLaw("linear", 0.25, 0.05))
    pts, _ = cspace.quadrature()
    y = pts.reshape(-1, 2)
    h = 1e-5
    Mp = vector_mass(cspace, ev.jacobians(0.5 + h, (0.5, 0.5), y))
    Mm = vector_mass(cspace, ev.jacobians(0.5 - h, (0.5, 0.5), y))
    Mdot = mass_rate(cspace, ev.jacobians(0.5, (0.5, 0.5), y))
    assert abs((Mp - Mm) / (2 * h) - Mdot).max() < 1e-7


def test_zero_rhs_gives_zero_solution():
    space = dirichlet_square_space(4)
    u, p = solve_saddle(viscous_matrix(space), divergence_matrix(space),
                        np.zeros(space.n_velocity), dirichlet_dofs=space.dirichlet_dofs(),
                        gauge=pressure_mean_row(space))
    assert np.abs(u).max() == 0.0 and np.abs(p).max() == 0.0


def test_lid_driven_cavity():
    space = dirichlet_square_space(8)
    dof = space.dirichlet_dofs()
    xy = space.rep_coords()[space.dirichlet_nodes]
    g = np.concatenate([np.where(xy[:, 1] > 1 - 1e-12, 1.0, 0.0), np.zeros(len(xy))])
    B = divergence_matrix(space)
    gauge = pressure_mean_row(space)
    u, p = solve_saddle(viscous_matrix(space, None, 1.0, symmetric=False), B,
                        np.zeros(space.n_velocity), dirichlet_dofs=dof, dirichlet_values=g,
                        gauge=gauge)
    assert np.abs(u).max() == pytest.approx(1.0)
    assert np.abs(u[dof] - g).max() == 0.0
    assert np.abs(B @ u).max() < 1e-10
    assert abs(gauge @ p) < 1e-12


def test_induced_breakdown():
    space = dirichlet_square_space(4)
    rng = np.random.default_rng(1)
    s = SaddleSolver(viscous_matrix(space), divergence_matrix(space), space.dirichlet_dofs(),
                     gauge=pressure_mean_row(space), tol=1e-30)
    with pytest.raises(SolverBreakdown) as info:
        s.solve(rng.standard_normal(space.n_velocity))
    assert "residual" in info.value.diagnostics


def _stokes_setup(n=6):
    space = dirichlet_square_space(n)
    M = vector_mass(space)
    A = viscous_matrix(space, None, 1.0, symmetric=False)
    return space, M, A, divergence_matrix(space), pressure_mean_row(space)


def test_static_zero_data_stays_zero():
    space, M, A, B, g = _stokes_setup()
    v = np.zeros(space.n_velocity)
    solver = None
    for _ in range(3):
        v, _, solver = step_instationary(M, v, M, A, B, 0.1, dirichlet_dofs=space.dirichlet_dofs(),
                                         gauge=g, solver=solver)
    assert np.abs(v).max() == 0.0


def test_energy_decays_and_approaches_stationary():
    space, M, A, B, g = _stokes_setup()
    pts, _ = space.quadrature()
    f = np.zeros(pts.shape[:2] + (2,))
    f[..., 0] = np.sin(np.pi * pts[..., 1])
    F = load_vector(space, f)
    dof = space.dirichlet_dofs()
    v_inf, _ = solve_saddle(A, B, F, dirichlet_dofs=dof, gauge=g)
    # forced run from rest approaches the stationary solution monotonically
    v = np.zeros(space.n_velocity)
    solver, dist = None, []
    for _ in range(12):
        v, _, solver = step_instationary(M, v, M, A, B, 0.02, load=F, dirichlet_dofs=dof,
                                         gauge=g, solver=solver)
        e = v - v_inf
        dist.append(np.sqrt(e @ (M @ e)))
    assert np.all(np.diff(dist) < 0)
    # unforced run from the stationary state dissipates energy
    v, solver, energy = v_inf, None, []
    for _ in range(6):
        v, _, solver = step_instationary(M, v, M, A, B, 0.02, dirichlet_dofs=dof, gauge=g,
                                         solver=solver)
        energy.append(v @ (M @ v))
    assert np.all(np.diff(energy) <= 0)


def test_negative_step_rejected():
    space, M, A, B, g = _stokes_setup(2)
    with pytest.raises(ValueError):
        step_instationary(M, np.zeros(space.n_velocity), M, A, B, -0.1)


def test_outer_edge_flux_of_constant_field():
    dmesh = tile_epsilon_domain(triangulate_cell(build_cell_geometry(0.25), 0.2), 2)
    space = epsilon_space(dmesh)
    u = space.interpolate_velocity(lambda p: np.tile([1.0, 0.5], (len(p), 1)))
    # a constant field has no net flux through the closed outer boundary
    assert abs(edge_normal_flux(space, outer_edges(dmesh), u)) < 1e-12


@pytest.fixture(scope="module")
def coarse_cell():
    return triangulate_cell(build_cell_geometry(0.25), 0.2)


def test_direct_static_zero_data(coarse_cell):
    ev = MicrostructureEvolution(RadiusLaw("constant", 0.25))
    traj = solve_direct_epsilon(tile_epsilon_domain(coarse_cell, 2), ev, np.linspace(0, 1, 3))
    assert max(np.abs(v).max() for v in traj.velocity) == 0.0
    assert traj.apriori["w_L2"] == 0.0


def test_direct_shrinking_outflow_matches_area_rate(cell_mesh_fine):
    ev = MicrostructureEvolution(RadiusLaw("linear", 0.25, -0.05))
    dmesh = tile_epsilon_domain(cell_mesh_fine, 2)
    times = np.linspace(0.0, 1.0, 3)
    traj = solve_direct_epsilon(dmesh, ev, times)
    for n in (1, 2):
        r = 0.25 - 0.05 * times[n]
        # fluid area grows by -2 pi r r' in total over the n^2 cells, so fluid enters
        fluid_area_rate = -2 * np.pi * r * (-0.05)
        assert traj.outflow[n] == pytest.approx(-fluid_area_rate, rel=0.02)


def test_direct_apriori_norms_bounded(coarse_cell):
    from memdarcy.macro_darcy import boundary_pressure
    ev = MicrostructureEvolution(RadiusLaw("constant", 0.25))
    times = np.linspace(0.0, 1.0, 3)
    norms = [solve_direct_epsilon(tile_epsilon_domain(coarse_cell, n), ev, times,
                                  p_b=boundary_pressure("linear")).apriori for n in (4, 8)]
    for key in ("w_L2", "eps_grad_w_L2", "q_L2"):
        hi, lo = max(norms[0][key], norms[1][key]), min(norms[0][key], norms[1][key])
        assert lo > 0 and hi / lo < 3


def test_resource_guard(coarse_cell):
    from memdarcy.errors import ResourceGuard
    ev = MicrostructureEvolution(RadiusLaw("constant", 0.25))
    with pytest.raises(ResourceGuard):
        solve_direct_epsilon(tile_epsilon_domain(coarse_cell, 2), ev, np.linspace(0, 1, 2),
                             max_dofs=10)


def test_poincare_unit_square():
    assert estimate_poincare_constant(dirichlet_square_space(16)) == pytest.approx(
        1 / (np.pi * np.sqrt(2)), rel=0.02)


def test_poincare_monotone_in_inclusion_size():
    small = cell_space(triangulate_cell(build_cell_geometry(0.1), 0.1))
    large = cell_space(triangulate_cell(build_cell_geometry(0.3), 0.1))
    assert estimate_poincare_constant(small) > estimate_poincare_constant(large)


def test_korn_identity_positive_and_deterministic(cspace):
    k0 = estimate_korn_constant(cspace)
    assert k0 > 0
    jac = moving_jac(cspace, t=0.0)
    a = estimate_korn_constant(cspace, jac.Psi_inv)
    b = estimate_korn_constant(cspace, moving_jac(cspace, t=0.0).Psi_inv)
    assert a > 0 and abs(a - b) < 1e-10 * a


def test_periodic_space_identifies_dofs(cspace):
    # periodic vertices share a representative, so the space is smaller than the raw P2 count
    nv = len(cspace.vertices)
    assert cspace.n_pressure < nv
    assert sp.issparse(divergence_matrix(cspace))
