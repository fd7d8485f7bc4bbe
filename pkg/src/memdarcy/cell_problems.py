"""Transformed cell problems and the memory permeability kernel.

For a start time s and direction e_i the cell velocity solves an instationary
Stokes problem on the fixed reference cell with the moving-frame coefficients,
no-slip on the inclusion, periodic conditions on the cell faces and initial
value e_i (in physical coordinates). The kernel entry is the volume integral

    K_ji(s, t, x) = int_{Y*} J (A^{-1} zeta_i) . e_j dy = int_{Y*} (Psi zeta_i) . e_j dy.

Cell problems for the kernel use unit viscosity; 1/mu enters the Darcy law.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import os

import numpy as np
from scipy.sparse import csr_matrix, vstack

from .errors import CacheCorruption, IncompatibleInitialData, KernelIncomplete
from .io import read_table, write_table
from .kinematics import MicrostructureEvolution
from .stokes_fem.assembly import (divergence_matrix, divergence_rows, load_vector,
                                  pressure_mean_row, transport_matrix, vector_mass,
                                  viscous_matrix)
from .stokes_fem.elements import refined_rule
from .stokes_fem.solver import SaddleSolver
from .stokes_fem.space import cell_space

log = logging.getLogger(__name__)

ENRICH_DROP = 1e-12
FINE_LEVELS = 2


@dataclass
class KernelGrid:
    times: np.ndarray
    start_indices: np.ndarray
    macro_points: np.ndarray

    @classmethod
    def uniform(cls, T, N, macro_points, start_indices=None):
        times = np.linspace(0.0, T, N + 1)
        starts = np.arange(N + 1) if start_indices is None else np.asarray(start_indices)
        return cls(times=times, start_indices=starts,
                   macro_points=np.atleast_2d(np.asarray(macro_points, dtype=float)))

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def N(self) -> int:
        return len(self.times) - 1


@dataclass
class MemoryKernel:
    """Sampled kernel K[m, n, q] = K(s_m, t_n, x_q) (NaN where not stored) and companions."""

    times: np.ndarray
    macro_points: np.ndarray
    K: np.ndarray            # (N+1, N+1, Q, 2, 2)
    a_in: np.ndarray         # (N+1, Q, 2)
    theta: np.ndarray        # (N+1, Q)
    theta_rate: np.ndarray   # (N+1, Q)
    point_group: np.ndarray  # (Q,) index of the distinct cell computation per point
    diagnostics: dict = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.times) - 1

    @property
    def n_points(self) -> int:
        return len(self.macro_points)

    @property
    def n_distinct(self) -> int:
        return int(self.point_group.max()) + 1 if len(self.point_group) else 0

    def require(self, n):
        """Raise KernelIncomplete unless K(s_m, t_n) is stored for all m <= n."""
        block = self.K[: n + 1, n]
        if not np.all(np.isfinite(block)):
            raise KernelIncomplete(f"kernel entries missing for target step {n}")

    def diagonal_defect(self) -> float:
        """max over stored s, x of |K(s, s, x) - Theta(s, x) I|."""
        out = 0.0
        for m in range(self.N + 1):
            Kd = self.K[m, m]
            if np.all(np.isfinite(Kd)):
                ref = self.theta[m][:, None, None] * np.eye(2)
                out = max(out, float(np.abs(Kd - ref).max()))
        return out


class CellProblemSolver:
    """Transient transformed cell problems at one macro point on a fixed cell mesh."""

    def __init__(self, ev: MicrostructureEvolution, mesh, x, times, tol=1e-10, enrich=True):
        self.ev = ev
        self.mesh = mesh
        self.x = np.asarray(x, dtype=float)
        self.times = np.asarray(times, dtype=float)
        self.tol = tol
        self.enrich = enrich
        self.space = cell_space(mesh)
        pts, _ = self.space.quadrature()
        self.y = pts.reshape(-1, 2)
        # volume functionals and the displacement constraint use a finer rule, since
        # their integrands are not polynomial on the triangles
        self.rule = refined_rule(FINE_LEVELS)
        fpts, fw = self.space.quadrature(self.rule)
        self.nt, self.nqf = fw.shape
        self.yf = fpts.reshape(-1, 2)
        self.w = fw.ravel()
        self.B = divergence_matrix(self.space)
        self.gauge_p1 = pressure_mean_row(self.space)
        self._jac = {}
        self._jac_fine = {}
        self.static = ev.is_static()

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def jac(self, n):
        if n not in self._jac:
            self._jac[n] = self.ev.jacobians(self.times[n], self.x, self.y)
        return self._jac[n]

    def jac_fine(self, n):
        if n not in self._jac_fine:
            self._jac_fine[n] = self.ev.jacobians(self.times[n], self.x, self.yf)
        return self._jac_fine[n]

    def theta(self, n) -> float:
        """Fluid volume int_{Y*_h} J dy on the mesh quadrature."""
        return float(self.w @ self.jac_fine(n).J)

    def theta_rate(self, n) -> float:
        return float(self.w @ self.jac_fine(n).dt_J)

    def constraint_rows(self, n):
        """Divergence rows: P1 pressures plus displacement components of the map at t_n."""
        rows = [self.B]
        n_extra = 0
        if self.enrich:
            d = (self.jac_fine(n).psi - self.yf).T.reshape(2, self.nt, self.nqf)
            keep = [k for k in range(2) if np.abs(d[k]).max() > ENRICH_DROP]
            if keep:
                E = divergence_rows(self.space, d[keep], self.rule)
                E = E / np.linalg.norm(E, axis=1)[:, None] * np.abs(self.B).sum(axis=1).max()
                rows.append(csr_matrix(E))
                n_extra = len(keep)
        C = vstack(rows).tocsr()
        gauge = np.concatenate([self.gauge_p1, np.zeros(n_extra)])
        return C, gauge

    def operators(self, n, mu):
        jac = None if self.static and self._identity() else self.jac(n)
        M = vector_mass(self.space, jac)
        A = viscous_matrix(self.space, jac, mu, symmetric=False)
        if not self.static:
            A = A + transport_matrix(self.space, jac)
        return M, A

    def _identity(self):
        j = self.jac(0)
        return np.abs(j.Psi - np.eye(2)).max() < 1e-14

    def solver(self, n, mu):
        M, A = self.operators(n, mu)
        C, gauge = self.constraint_rows(n)
        return M, SaddleSolver(M / self.dt + A, C, self.space.dirichlet_dofs(), gauge=gauge,
                               tol=self.tol)

    def initial_load(self, n):
        """Loads int Psi(t_n)^T e_i . phi for i = 1, 2 as columns."""
        Psi = self.jac(n).Psi
        return np.stack([load_vector(self.space, Psi[:, i, :]) for i in range(2)], axis=1)

    def volume_integral(self, n, zeta):
        """int (Psi zeta) dy for columns of zeta -> (2, k) (rows j)."""
        uq, _ = self.space.velocity_at_quadrature_multi(zeta, self.rule)
        Psi = self.jac_fine(n).Psi
        return np.einsum("p,pji,kpi->jk", self.w, Psi, uq)

    def plain_integral(self, zeta):
        uq, _ = self.space.velocity_at_quadrature_multi(zeta, self.rule)
        return np.einsum("p,kpi->ik", self.w, uq)

    # -- kernel ----------------------------------------------------------------
    def run_kernel(self, start_indices=None):
        """Return K[m, n] (2x2 blocks, NaN for m > n) and diagnostics."""
        N = len(self.times) - 1
        starts = set(range(N + 1) if start_indices is None else (int(m) for m in start_indices))
        K = np.full((N + 1, N + 1, 2, 2), np.nan)
        Kplain = np.full_like(K, np.nan)
        for m in starts:
            K[m, m] = self.theta(m) * np.eye(2)
            Kplain[m, m] = K[m, m]
        active = []            # start indices with a running trajectory
        state = None           # (nu, 2 * len(active)) velocities at t_{n-1}
        M_prev = None
        solver = None
        max_div = 0.0
        for n in range(1, N + 1):
            if solver is None or not self.static:
                M_n, solver = self.solver(n, 1.0)
            cols = []
            if active:
                cols.append(M_prev @ state / self.dt)
            if (n - 1) in starts:
                cols.append(self.initial_load(n - 1) / self.dt)
                active.append(n - 1)
            if not cols:
                M_prev = M_n
                continue
            rhs = np.hstack(cols)
            state, _ = solver.solve(rhs)
            C, _ = self.constraint_rows(n)
            max_div = max(max_div, float(np.abs(C @ state).max()))
            vol = self.volume_integral(n, state)
            plain = self.plain_integral(state)
            for k, m in enumerate(active):
                K[m, n] = vol[:, 2 * k:2 * k + 2]
                Kplain[m, n] = plain[:, 2 * k:2 * k + 2]
            M_prev = M_n
        stored = np.isfinite(K)
        diag = {"back_transform_defect": float(np.abs(K[stored] - Kplain[stored]).max()),
                "max_divergence_residual": max_div}
        return K, diag

    # -- initial-value problem ----------------------------------------------------
    def stokes_mode(self, mu=1.0):
        """Stationary cell Stokes velocity at t=0 driven by e_1, unit M-norm."""
        M, A = self.operators(0, mu)
        C, gauge = self.constraint_rows(0)
        A_static = viscous_matrix(self.space, None if self._identity() else self.jac(0), mu,
                                  symmetric=False)
        s = SaddleSolver(A_static, C, self.space.dirichlet_dofs(), gauge=gauge, tol=self.tol)
        v, _ = s.solve(self.initial_load(0)[:, 0])
        return v / np.sqrt(v @ (M @ v))

    def check_initial(self, v0, rtol=1e-8):
        scale = max(np.abs(v0).max(), 1e-300)
        if np.abs(v0[self.space.dirichlet_dofs()]).max(initial=0.0) > 1e-10 * scale:
            raise IncompatibleInitialData("initial cell velocity does not vanish on the interface")
        C, _ = self.constraint_rows(0)
        res = np.abs(C @ v0).max(initial=0.0)
        if res > rtol * scale * np.abs(C).sum(axis=1).max():
            raise IncompatibleInitialData(
                f"initial cell velocity is not discretely divergence free (residual {res:.2e})")

    def run_initial(self, v0, mu=1.0):
        """a_in(t_n) = int Psi zeta0(t_n) dy for the transformed initial field ``v0``."""
        N = len(self.times) - 1
        a = np.zeros((N + 1, 2))
        if not np.any(v0):
            return a
        self.check_initial(v0)
        a[0] = self.volume_integral(0, v0[:, None])[:, 0]
        M_prev, _ = self.operators(0, mu)
        v = v0
        solver = None
        for n in range(1, N + 1):
            if solver is None or not self.static:
                M_n, solver = self.solver(n, mu)
            v, _ = solver.solve(M_prev @ v / self.dt)
            a[n] = self.volume_integral(n, v[:, None])[:, 0]
            M_prev = M_n
        return a


def stationary_permeability(mesh, tol=1e-10):
    """Permeability of the steady cell Stokes problem on an undeformed cell.

    Solves -lap w_i + grad pi_i = e_i with no-slip on the inclusion and periodic
    faces; returns int w_i . e_j dy (rows j, columns i). The stationary Darcy
    velocity is then (1/mu) K_stat (f - grad p).
    """
    space = cell_space(mesh)
    A = viscous_matrix(space, None, 1.0, symmetric=False)
    s = SaddleSolver(A, divergence_matrix(space), space.dirichlet_dofs(),
                     gauge=pressure_mean_row(space), tol=tol)
    _, w = space.quadrature()
    ones = np.ones(w.shape)
    rhs = np.stack([load_vector(space, np.stack([ones * (i == 0), ones * (i == 1)], -1)
                                .reshape(-1, 2)) for i in range(2)], axis=1)
    W, _ = s.solve(rhs)
    uq, _ = space.velocity_at_quadrature_multi(W)
    return np.einsum("p,kpi->ik", w.ravel(), uq)


def evolution_key(ev: MicrostructureEvolution, times, x):
    """Hashable identity of the cell computation at macro point x."""
    # 13 significant digits: merges points whose radii differ only by rounding
    r = tuple(f"{float(ev.law.radius(t, x)):.12e}" for t in times)
    rd = tuple(f"{float(ev.law.rate(t, x)):.12e}" for t in times)
    return (r, rd, ev.r0, ev.R_c, tuple(ev.center))


def build_kernel(ev: MicrostructureEvolution, macro_points, mesh, times, mu=1.0,
                 v0_init="zero", tol=1e-10, progress=None):
    """Kernel, initial-velocity integrals and porosity at every macro point.

    Points whose evolution parameters coincide share one cell computation.
    """
    ev.check_admissible()
    times = np.asarray(times, dtype=float)
    pts = np.atleast_2d(np.asarray(macro_points, dtype=float))
    N = len(times) - 1
    Q = len(pts)
    groups = {}
    point_group = np.empty(Q, dtype=np.int64)
    for q, x in enumerate(pts):
        key = evolution_key(ev, times, x)
        point_group[q] = groups.setdefault(key, len(groups))
    reps = np.zeros(len(groups), dtype=np.int64)
    for q in range(Q - 1, -1, -1):
        reps[point_group[q]] = q

    K = np.full((N + 1, N + 1, Q, 2, 2), np.nan)
    a_in = np.zeros((N + 1, Q, 2))
    theta = np.zeros((N + 1, Q))
    theta_rate = np.zeros((N + 1, Q))
    diag = {"distinct_computations": len(groups), "transient_solves": 0,
            "back_transform_defect": 0.0, "max_divergence_residual": 0.0}
    for g, q in enumerate(reps):
        cps = CellProblemSolver(ev, mesh, pts[q], times, tol=tol)
        Kg, d = cps.run_kernel()
        diag["transient_solves"] += N * (N + 1)
        diag["back_transform_defect"] = max(diag["back_transform_defect"], d["back_transform_defect"])
        diag["max_divergence_residual"] = max(diag["max_divergence_residual"],
                                              d["max_divergence_residual"])
        if v0_init == "zero":
            ag = np.zeros((N + 1, 2))
        elif v0_init == "stokes_mode":
            ag = cps.run_initial(cps.stokes_mode(mu), mu)
        else:
            ag = cps.run_initial(np.asarray(v0_init, dtype=float), mu)
        th = np.array([cps.theta(n) for n in range(N + 1)])
        thr = np.array([cps.theta_rate(n) for n in range(N + 1)])
        members = np.flatnonzero(point_group == g)
        K[:, :, members] = Kg[:, :, None]
        a_in[:, members] = ag[:, None]
        theta[:, members] = th[:, None]
        theta_rate[:, members] = thr[:, None]
        if progress:
            progress(g + 1, len(groups))
        log.info("cell computation %d/%d done (macro point %s)", g + 1, len(groups), pts[q])
    return MemoryKernel(times=times, macro_points=pts, K=K, a_in=a_in, theta=theta,
                        theta_rate=theta_rate, point_group=point_group, diagnostics=diag)


# -- persistence -------------------------------------------------------------------

KERNEL_FILES = ("kernel.csv", "a_in.csv", "theta.csv", "macro_points.csv")


def write_kernel(directory, kernel: MemoryKernel, scenario_hash: str):
    os.makedirs(directory, exist_ok=True)
    N, Q = kernel.N, kernel.n_points
    meta = {"scenario": scenario_hash, "N": N, "Q": Q, "T": repr(float(kernel.times[-1]))}
    rows = []
    for m in range(N + 1):
        for n in range(m, N + 1):
            for q in range(Q):
                k = kernel.K[m, n, q]
                rows.append((m, n, q, k[0, 0], k[0, 1], k[1, 0], k[1, 1]))
    write_table(os.path.join(directory, "kernel.csv"), meta,
                ["s_index", "t_index", "q_index", "K11", "K12", "K21", "K22"], rows)
    write_table(os.path.join(directory, "a_in.csv"), meta, ["t_index", "q_index", "a1", "a2"],
                [(n, q, *kernel.a_in[n, q]) for n in range(N + 1) for q in range(Q)])
    write_table(os.path.join(directory, "theta.csv"), meta,
                ["t_index", "q_index", "theta", "theta_rate"],
                [(n, q, kernel.theta[n, q], kernel.theta_rate[n, q])
                 for n in range(N + 1) for q in range(Q)])
    write_table(os.path.join(directory, "macro_points.csv"), meta,
                ["q_index", "x1", "x2", "computation"],
                [(q, *kernel.macro_points[q], kernel.point_group[q]) for q in range(Q)])


def read_kernel(directory, scenario_hash: str | None = None) -> MemoryKernel:
    """Load kernel files; CacheCorruption on checksum or scenario mismatch."""
    expect = {} if scenario_hash is None else {"scenario": scenario_hash}
    meta, _, rows = read_table(os.path.join(directory, "kernel.csv"), expect)
    N, Q, T = int(meta["N"]), int(meta["Q"]), float(meta["T"])
    K = np.full((N + 1, N + 1, Q, 2, 2), np.nan)
    for r in rows:
        m, n, q = int(r[0]), int(r[1]), int(r[2])
        K[m, n, q] = np.array([float(v) for v in r[3:]]).reshape(2, 2)
    _, _, rows = read_table(os.path.join(directory, "a_in.csv"), expect)
    a_in = np.zeros((N + 1, Q, 2))
    for r in rows:
        a_in[int(r[0]), int(r[1])] = [float(r[2]), float(r[3])]
    _, _, rows = read_table(os.path.join(directory, "theta.csv"), expect)
    theta = np.zeros((N + 1, Q))
    theta_rate = np.zeros((N + 1, Q))
    for r in rows:
        theta[int(r[0]), int(r[1])] = float(r[2])
        theta_rate[int(r[0]), int(r[1])] = float(r[3])
    _, _, rows = read_table(os.path.join(directory, "macro_points.csv"), expect)
    pts = np.zeros((Q, 2))
    group = np.zeros(Q, dtype=np.int64)
    for r in rows:
        pts[int(r[0])] = [float(r[1]), float(r[2])]
        group[int(r[0])] = int(r[3])
    if len(rows) != Q:
        raise CacheCorruption(f"{directory}: macro point table incomplete")
    times = np.linspace(0.0, T, N + 1)
    return MemoryKernel(times=times, macro_points=pts, K=K, a_in=a_in, theta=theta,
                        theta_rate=theta_rate, point_group=group)
