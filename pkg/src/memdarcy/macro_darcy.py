"""Macroscopic Darcy law with memory on a structured triangulation of the unit square.

Velocity (per element, constant) at t_n:

    v_n = a_in(t_n) + (dt/mu) sum_{m=0}^{n-1} K(s_m, t_n) (f - grad p)(t_{m+1})

with div v_n = S_n (S = -dTheta/dt for no-slip interfaces) and p = p_b on the
boundary. The memory sum pairs each kernel start time s_m with the forcing at
the end of its interval, which reproduces the discrete stationary Darcy law
exactly on static domains. Substituting the sum into the weak divergence
condition gives at every step a weighted Poisson problem for p_n with tensor
(dt/mu) K(s_{n-1}, t_n).
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import os

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import SolverBreakdown
from .io import write_table, write_vtk
from .stokes_fem.elements import element_geometry, p1_ref_gradients
from .stokes_fem.space import boundary_edges, unit_square_mesh

log = logging.getLogger(__name__)


@dataclass
class MacroMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    n: int

    @classmethod
    def structured(cls, n):
        v, t = unit_square_mesh(n)
        return cls(vertices=v, triangles=t, n=n)

    @property
    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def areas(self):
        _, _, det, _ = element_geometry(self.vertices, self.triangles)
        return 0.5 * np.abs(det)

    @property
    def gradients(self):
        """(nt, 3, 2) gradients of the P1 hat functions."""
        _, _, _, BinvT = element_geometry(self.vertices, self.triangles)
        return np.einsum("tij,aj->tai", BinvT, p1_ref_gradients())

    @property
    def boundary_nodes(self):
        return np.unique(boundary_edges(self.triangles))

    def locate(self, x):
        """Element index containing each point (structured layout: square, lower/upper)."""
        x = np.atleast_2d(x)
        n = self.n
        i = np.clip(np.floor(x[:, 0] * n).astype(int), 0, n - 1)
        j = np.clip(np.floor(x[:, 1] * n).astype(int), 0, n - 1)
        fx = x[:, 0] * n - i
        fy = x[:, 1] * n - j
        upper = (fy > fx).astype(int)
        return 2 * (j * n + i) + upper

    def evaluate_p1(self, values, x):
        """Evaluate a nodal P1 field at points x."""
        x = np.atleast_2d(x)
        e = self.locate(x)
        tri = self.triangles[e]
        p0 = self.vertices[tri[:, 0]]
        B = np.stack([self.vertices[tri[:, 1]] - p0, self.vertices[tri[:, 2]] - p0], axis=2)
        xi = np.linalg.solve(B, (x - p0)[:, :, None])[:, :, 0]
        lam = np.c_[1 - xi.sum(1), xi]
        return (lam * values[tri]).sum(1)


def constant_force(f):
    f = np.asarray(f, dtype=float)
    return lambda t, x: np.broadcast_to(f, np.shape(x)[:-1] + (2,))


def boundary_pressure(spec):
    """Callable p_b(x) from "linear" (1 - x1), "zero" or a number."""
    if spec == "linear":
        return lambda x: 1.0 - np.asarray(x)[..., 0]
    if spec == "zero":
        return lambda x: np.zeros(np.shape(x)[:-1])
    value = float(spec)
    return lambda x: np.full(np.shape(x)[:-1], value)


@dataclass
class MacroProblem:
    mesh: MacroMesh
    kernel: object                 # MemoryKernel sampled at the element centroids
    mu: float = 1.0
    force: object = None           # callable (t, x) -> (..., 2)
    p_b: object = None             # callable x -> (...)
    source: np.ndarray | None = None   # (N+1, ne) divergence source; default -theta_rate
    tol: float = 1e-10

    def __post_init__(self):
        if self.force is None:
            self.force = constant_force((0.0, 0.0))
        if self.p_b is None:
            self.p_b = boundary_pressure("linear")
        ne = len(self.mesh.triangles)
        if self.kernel.n_points != ne:
            raise ValueError("kernel must be sampled at one point per macro element")
        if self.source is None:
            self.source = -self.kernel.theta_rate

    @property
    def times(self):
        return self.kernel.times

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])


@dataclass
class MacroField:
    times: np.ndarray
    pressure: np.ndarray       # (N+1, nv), row 0 undefined (NaN)
    velocity: np.ndarray       # (N+1, ne, 2)
    flux_balance: np.ndarray   # (N+1,) relative |flux - int S| / max(1, |int S|)
    boundary_flux: np.ndarray  # (N+1,) variationally consistent outflow
    edge_flux: np.ndarray      # (N+1,) plain edge integral of the element velocity
    source_total: np.ndarray   # (N+1,) int_Omega S
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _stiffness(mesh, tensors):
    """int (T grad p) . grad phi with per-element 2x2 tensors T."""
    g = mesh.gradients
    loc = mesh.areas[:, None, None] * np.einsum("tai,tij,tbj->tab", g, tensors, g)
    tri = mesh.triangles
    nv = len(mesh.vertices)
    return sp.coo_matrix((loc.ravel(), (tri[:, :, None].repeat(3, 2).ravel(),
                                        tri[:, None, :].repeat(3, 1).ravel())),
                         shape=(nv, nv)).tocsr()


def _load_from_vectors(mesh, vec):
    """int w . grad phi_i for a per-element constant vector field w."""
    g = mesh.gradients
    loc = mesh.areas[:, None] * np.einsum("tai,ti->ta", g, vec)
    return np.bincount(mesh.triangles.ravel(), weights=loc.ravel(), minlength=len(mesh.vertices))


def _load_from_scalars(mesh, s):
    loc = (mesh.areas * s / 3.0)[:, None].repeat(3, 1)
    return np.bincount(mesh.triangles.ravel(), weights=loc.ravel(), minlength=len(mesh.vertices))


def _edge_flux(mesh, v):
    """Plain boundary integral of the element-constant velocity's normal component."""
    tri = mesh.triangles
    total = 0.0
    bset = {tuple(e) for e in boundary_edges(tri)}
    for t, (a, b, c) in enumerate(tri):
        for p, q, r in ((a, b, c), (b, c, a), (c, a, b)):
            if (min(p, q), max(p, q)) in bset:
                d = mesh.vertices[q] - mesh.vertices[p]
                nu = np.array([d[1], -d[0]])
                if np.dot(mesh.vertices[r] - mesh.vertices[p], nu) > 0:
                    nu = -nu
                total += float(np.dot(v[t], nu))
    return total


def step_macro(problem: MacroProblem, grad_history, n):
    """Pressure and velocity at t_n given grad p at t_1..t_{n-1}.

    grad_history: array (N+1, ne, 2) with rows 1..n-1 filled.
    Returns (p_n, v_n, grad p_n, residual).
    """
    ker = problem.kernel
    ker.require(n)
    mesh = problem.mesh
    dt, mu = problem.dt, problem.mu
    times = problem.times
    x = mesh.centroids
    K = ker.K
    hist = np.zeros((len(x), 2))
    for m in range(n - 1):
        fm = problem.force(times[m + 1], x)
        hist += np.einsum("qij,qj->qi", K[m, n], fm - grad_history[m + 1])
    Kn = K[n - 1, n]
    known = ker.a_in[n] + (dt / mu) * (hist + np.einsum("qij,qj->qi", Kn, problem.force(times[n], x)))
    # weak form: int v . grad phi = -int S phi for interior test functions
    A = _stiffness(mesh, (dt / mu) * Kn)
    rhs = _load_from_vectors(mesh, known) + _load_from_scalars(mesh, problem.source[n])
    nv = len(mesh.vertices)
    bnd = mesh.boundary_nodes
    free = np.setdiff1d(np.arange(nv), bnd)
    p = np.zeros(nv)
    p[bnd] = problem.p_b(mesh.vertices[bnd])
    A_ff = A[free][:, free].tocsc()
    b = rhs[free] - A[free][:, bnd] @ p[bnd]
    try:
        lu = splu(A_ff)
    except RuntimeError as exc:
        raise SolverBreakdown(f"macro pressure factorisation failed: {exc}") from exc
    p[free] = lu.solve(b)
    res = np.linalg.norm(A_ff @ p[free] - b) / max(np.linalg.norm(b), 1e-300)
    if np.linalg.norm(b) > 0 and res >= problem.tol:
        p[free] += lu.solve(b - A_ff @ p[free])
        res = np.linalg.norm(A_ff @ p[free] - b) / np.linalg.norm(b)
        if res >= problem.tol:
            raise SolverBreakdown(f"macro pressure residual {res:.3e}", {"step": n, "residual": res})
    grad = np.einsum("tai,ta->ti", mesh.gradients, p[mesh.triangles])
    v = known - (dt / mu) * np.einsum("qij,qj->qi", Kn, grad)
    return p, v, grad, (res if np.linalg.norm(b) > 0 else 0.0)


def run_macro(problem: MacroProblem) -> MacroField:
    """Time-step the memory Darcy law over the kernel's time grid."""
    mesh = problem.mesh
    ker = problem.kernel
    N = ker.N
    ne, nv = len(mesh.triangles), len(mesh.vertices)
    pressure = np.full((N + 1, nv), np.nan)
    velocity = np.zeros((N + 1, ne, 2))
    velocity[0] = ker.a_in[0]
    grads = np.zeros((N + 1, ne, 2))
    balance = np.zeros(N + 1)
    flux = np.zeros(N + 1)
    eflux = np.zeros(N + 1)
    total = np.zeros(N + 1)
    residuals = np.zeros(N + 1)
    areas = mesh.areas
    bnd = mesh.boundary_nodes
    for n in range(1, N + 1):
        p, v, g, res = step_macro(problem, grads, n)
        pressure[n], velocity[n], grads[n], residuals[n] = p, v, g, res
        # outflow as the boundary residual of the weak divergence equation
        r = _load_from_vectors(mesh, v) + _load_from_scalars(mesh, problem.source[n])
        flux[n] = float(r[bnd].sum())
        total[n] = float(areas @ problem.source[n])
        balance[n] = abs(flux[n] - total[n]) / max(1.0, abs(total[n]))
        eflux[n] = _edge_flux(mesh, v)
        log.info("macro step %d: outflow %.6e, source %.6e, balance %.2e", n, flux[n], total[n], balance[n])
    return MacroField(times=ker.times, pressure=pressure, velocity=velocity, flux_balance=balance,
                      boundary_flux=flux, edge_flux=eflux, source_total=total, residuals=residuals)


def general_divergence_source(v_gamma, ev, t, x, n_points=256):
    """-int_{Gamma(t,x)} v_Gamma . n dy with n the fluid-outward normal on the current interface.

    ``v_gamma`` maps physical interface points (m, 2) to velocities (m, 2).
    """
    r = float(ev.law.radius(t, np.asarray(x, dtype=float)))
    th = 2 * np.pi * (np.arange(n_points) + 0.5) / n_points
    e_r = np.c_[np.cos(th), np.sin(th)]
    pts = np.asarray(ev.center) + r * e_r
    vals = np.asarray(v_gamma(pts), dtype=float)
    normal = -e_r      # fluid lies outside the disk
    return -float(((vals * normal).sum(1)).sum() * (2 * np.pi * r / n_points))


def interface_velocity(ev, t, x):
    """Velocity of the moving interface, d_t psi_0 composed with the inverse map, as a callable."""
    x = np.asarray(x, dtype=float)
    rdot = float(ev.law.rate(t, x))
    c = np.asarray(ev.center)

    def v(points):
        z = np.atleast_2d(points) - c
        s = np.hypot(z[:, 0], z[:, 1])
        return rdot * z / s[:, None]
    return v


def write_macro_outputs(directory, mesh: MacroMesh, field: MacroField, scenario_hash,
                        emit_vtk=False):
    os.makedirs(directory, exist_ok=True)
    meta = {"scenario": scenario_hash}
    N = len(field.times) - 1
    write_table(os.path.join(directory, "macro_pressure.csv"), meta,
                ["t_index", "node_index", "p"],
                [(n, i, field.pressure[n, i]) for n in range(1, N + 1)
                 for i in range(field.pressure.shape[1])])
    write_table(os.path.join(directory, "macro_velocity.csv"), meta,
                ["t_index", "element_index", "v1", "v2"],
                [(n, e, *field.velocity[n, e]) for n in range(N + 1)
                 for e in range(field.velocity.shape[1])])
    write_table(os.path.join(directory, "mass_balance.csv"), meta,
                ["t_index", "time", "boundary_flux", "source_integral", "relative_defect",
                 "edge_flux", "pressure_residual"],
                [(n, field.times[n], field.boundary_flux[n], field.source_total[n],
                  field.flux_balance[n], field.edge_flux[n], field.residuals[n])
                 for n in range(1, N + 1)])
    if emit_vtk:
        for n in range(1, N + 1):
            write_vtk(os.path.join(directory, f"macro_{n:04d}.vtk"), mesh.vertices, mesh.triangles,
                      point_data={"pressure": field.pressure[n]},
                      cell_data={"velocity": field.velocity[n]})
