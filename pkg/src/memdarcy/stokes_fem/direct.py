"""Direct transformed Stokes solves on the epsilon-tiled perforated domain."""
from __future__ import annotations

from dataclasses import dataclass, field
import logging

import numpy as np

from ..errors import ResourceGuard
from ..kinematics import EpsilonRealisation
from .assembly import (boundary_pressure_load, divergence_matrix, load_vector, transport_matrix,
                       vector_mass, viscous_matrix)
from .elements import p2_values
from .solver import SaddleSolver
from .space import boundary_edges, epsilon_space

log = logging.getLogger(__name__)


@dataclass
class DirectTrajectory:
    """Transformed velocity/pressure on Omega_eps at every time level."""

    epsilon: float
    times: np.ndarray
    space: object
    velocity: list
    pressure: list
    lifting: list
    outflow: np.ndarray
    apriori: dict = field(default_factory=dict)
    residuals: list = field(default_factory=list)


def outer_edges(dmesh):
    """Boundary edges of the tiled mesh that lie on the boundary of the unit square."""
    e = boundary_edges(dmesh.triangles)
    v = dmesh.vertices
    tol = 1e-12

    def on_square(p):
        return (p[:, 0] < tol) | (p[:, 0] > 1 - tol) | (p[:, 1] < tol) | (p[:, 1] > 1 - tol)
    keep = on_square(v[e[:, 0]]) & on_square(v[e[:, 1]])
    return e[keep]


def edge_normal_flux(space, edges, u, n_gauss=3):
    """int_edges u . nu with outward normal, for a P2 velocity u."""
    V = space.vertices
    tri_of = {}
    for t, tri in enumerate(space.triangles):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            tri_of[(min(tri[a], tri[b]), max(tri[a], tri[b]))] = t
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    sg = 0.5 * (xg + 1)
    wg = 0.5 * wg
    ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    total = 0.0
    en = space.elem_vel_nodes
    for a, b in edges:
        t = tri_of[(min(a, b), max(a, b))]
        tri = space.triangles[t]
        la, lb = int(np.flatnonzero(tri == a)[0]), int(np.flatnonzero(tri == b)[0])
        N = p2_values(ref[la] + sg[:, None] * (ref[lb] - ref[la]))
        d = V[b] - V[a]
        nu = np.array([d[1], -d[0]])          # length-weighted normal
        if np.dot(V[tri[3 - la - lb]] - V[a], nu) > 0:
            nu = -nu
        uq = N @ np.c_[u[en[t]], u[en[t] + space.n_nodes]]
        total += float(wg @ (uq @ nu))
    return total


def solve_direct_epsilon(dmesh, ev, times, mu=1.0, force=None, p_b=None, max_dofs=None,
                         tol=1e-10):
    """Implicit Euler solve of the transformed epsilon problem.

    Unknowns are the transformed velocity and pressure. No-slip data on the
    interfaces is the nodal interpolant of A_eps d_t psi_eps; the outer boundary
    carries the traction condition with pressure p_b. Viscosity is mu * eps^2.
    """
    eps = dmesh.epsilon
    space = epsilon_space(dmesh)
    ndof = space.n_velocity + space.n_pressure
    if max_dofs is not None and ndof > max_dofs:
        raise ResourceGuard(f"epsilon={eps}: {ndof} unknowns exceed the cap of {max_dofs}")
    times = np.asarray(times, dtype=float)
    dt = float(times[1] - times[0])
    real = EpsilonRealisation(ev, dmesh.n)
    pts, w = space.quadrature()
    X = pts.reshape(-1, 2)
    ij = np.stack([dmesh.triangle_cell % dmesh.n, dmesh.triangle_cell // dmesh.n], axis=1)
    ijq = np.repeat(ij, pts.shape[1], axis=0)
    dof_d = space.dirichlet_dofs()
    node_xy = space.rep_coords()[space.dirichlet_nodes]
    node_ij = real.cell_of(node_xy)
    Bmat = divergence_matrix(space)
    lam_edges = outer_edges(dmesh)
    static = ev.is_static()

    def operators(t):
        jac = real.jacobians(t, X, ijq)
        M = vector_mass(space, jac)
        A = viscous_matrix(space, jac, mu * eps**2, symmetric=True)
        if not static:
            A = A + transport_matrix(space, jac)
        F = np.zeros(space.n_velocity)
        if force is not None:
            fq = np.asarray(force(t, jac.psi), dtype=float)
            F = load_vector(space, np.einsum("nki,nk->ni", jac.Psi, fq))
        if p_b is not None:
            F = F + boundary_pressure_load(space, lam_edges, p_b)
        return M, A, F

    def boundary_values(t):
        jn = real.jacobians(t, node_xy, node_ij)
        g = np.einsum("nij,nj->ni", jn.A, jn.dt_psi)
        return np.concatenate([g[:, 0], g[:, 1]])

    velocity = [np.zeros(space.n_velocity)]
    pressure = [np.zeros(space.n_pressure)]
    lifting = [np.zeros(space.n_velocity)]
    outflow = np.zeros(len(times))
    residuals = []
    M_prev, _, _ = operators(times[0])
    solver = None
    for n in range(1, len(times)):
        t = times[n]
        M, A, F = operators(t)
        if solver is None or not static:
            solver = SaddleSolver(M / dt + A, Bmat, dof_d, tol=tol)
        g = boundary_values(t)
        u, p = solver.solve(M_prev @ velocity[-1] / dt + F, None, g)
        lift = np.zeros(space.n_velocity)
        lift[dof_d] = g
        velocity.append(u)
        pressure.append(p)
        lifting.append(lift)
        residuals.append(solver.last_residual)
        outflow[n] = edge_normal_flux(space, lam_edges, u)
        M_prev = M
        log.info("direct eps=%g step %d: outflow %.6e", eps, n, outflow[n])
    traj = DirectTrajectory(epsilon=eps, times=times, space=space, velocity=velocity,
                            pressure=pressure, lifting=lifting, outflow=outflow,
                            residuals=residuals)
    traj.apriori = apriori_norms(traj, p_b)
    return traj


def apriori_norms(traj, p_b=None):
    """Discrete L2-in-time norms of w = v - lifting, eps * grad w and q = p - p_b."""
    space = traj.space
    _, w = space.quadrature()
    pts, _ = space.quadrature()
    dt = float(traj.times[1] - traj.times[0])
    pb = 0.0 if p_b is None else p_b(pts)
    sw = sg = sq = 0.0
    for n in range(1, len(traj.times)):
        wq, dwq = space.velocity_at_quadrature(traj.velocity[n] - traj.lifting[n])
        qq = space.pressure_at_quadrature(traj.pressure[n]) - pb
        sw += dt * float((w * (wq**2).sum(-1)).sum())
        sg += dt * float((w * (dwq**2).sum((-1, -2))).sum())
        sq += dt * float((w * qq**2).sum())
    return {"w_L2": np.sqrt(sw), "eps_grad_w_L2": traj.epsilon * np.sqrt(sg), "q_L2": np.sqrt(sq)}
