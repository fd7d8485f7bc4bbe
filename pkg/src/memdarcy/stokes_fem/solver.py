"""Saddle-point solves with Dirichlet elimination, multipliers and residual control."""
import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from ..errors import SolverBreakdown

log = logging.getLogger(__name__)


class SaddleSolver:
    """Factorised system  [[S, C^T, 0], [C, 0, g^T], [0, g, 0]]  on the free velocity DOFs.

    S: (nu, nu) velocity operator; C: (nc, nu) constraint rows (pressure and any
    extra divergence rows); g: optional gauge row acting on the constraint
    multipliers. Dirichlet DOFs are eliminated.
    """

    def __init__(self, S, C, dirichlet_dofs=(), gauge=None, tol=1e-10):
        S = sp.csr_matrix(S)
        C = sp.csr_matrix(C)
        nu = S.shape[0]
        self.nu, self.nc = nu, C.shape[0]
        self.tol = tol
        fixed = np.zeros(nu, dtype=bool)
        fixed[np.asarray(dirichlet_dofs, dtype=np.int64)] = True
        self.free = np.flatnonzero(~fixed)
        self.fixed = np.flatnonzero(fixed)
        self.S_fd = S[self.free][:, self.fixed]
        self.C_d = C[:, self.fixed]
        S_ff = S[self.free][:, self.free]
        C_f = C[:, self.free]
        blocks = [[S_ff, C_f.T], [C_f, None]]
        self.has_gauge = gauge is not None
        if self.has_gauge:
            g = sp.csr_matrix(np.asarray(gauge, dtype=float).reshape(1, -1))
            blocks = [[S_ff, C_f.T, None], [C_f, None, g.T], [None, g, None]]
        K = sp.bmat(blocks, format="csc")
        self.K = K
        try:
            self.lu = splu(K)
        except RuntimeError as exc:
            raise SolverBreakdown(f"factorisation failed: {exc}",
                                  {"size": K.shape[0], "nnz": K.nnz}) from exc

    @property
    def size(self):
        return self.K.shape[0]

    def solve(self, rhs_u, rhs_c=None, u_fixed=None):
        """Solve for (u, multipliers); columns of 2-D right-hand sides are independent."""
        rhs_u = np.asarray(rhs_u, dtype=float)
        multi = rhs_u.ndim == 2
        if not multi:
            rhs_u = rhs_u[:, None]
        k = rhs_u.shape[1]
        rhs_c = np.zeros((self.nc, k)) if rhs_c is None else np.asarray(rhs_c, dtype=float).reshape(self.nc, -1)
        if u_fixed is None:
            u_fixed = np.zeros((len(self.fixed), k))
        else:
            u_fixed = np.asarray(u_fixed, dtype=float).reshape(len(self.fixed), -1)
        b = [rhs_u[self.free] - self.S_fd @ u_fixed, rhs_c - self.C_d @ u_fixed]
        if self.has_gauge:
            b.append(np.zeros((1, k)))
        b = np.vstack(b)
        x = self._solve_checked(b)
        u = np.zeros((self.nu, k))
        u[self.free] = x[:len(self.free)]
        u[self.fixed] = u_fixed
        lam = x[len(self.free):len(self.free) + self.nc]
        if not multi:
            return u[:, 0], lam[:, 0]
        return u, lam

    def _solve_checked(self, b):
        x = self.lu.solve(b)
        bnorm = np.linalg.norm(b, axis=0)
        scale = np.where(bnorm > 0, bnorm, 1.0)
        res = np.linalg.norm(self.K @ x - b, axis=0) / scale
        if (res >= self.tol).any():
            # one pass of iterative refinement
            x = x + self.lu.solve(b - self.K @ x)
            res = np.linalg.norm(self.K @ x - b, axis=0) / scale
        if not np.all(np.isfinite(x)) or (res >= self.tol).any():
            raise SolverBreakdown(
                f"relative residual {res.max():.3e} exceeds tolerance {self.tol:.1e}",
                {"residual": float(res.max()), "tolerance": self.tol, "size": self.size,
                 "refinement_steps": 1})
        log.debug("saddle solve: size %d, max relative residual %.2e", self.size, res.max())
        self.last_residual = float(res.max())
        return x


def solve_saddle(S, C, rhs_u, rhs_c=None, dirichlet_dofs=(), dirichlet_values=None,
                 gauge=None, tol=1e-10):
    """One-shot saddle solve; returns (velocity, multipliers)."""
    solver = SaddleSolver(S, C, dirichlet_dofs, gauge=gauge, tol=tol)
    return solver.solve(rhs_u, rhs_c, dirichlet_values)


def step_instationary(M_prev, v_prev, M_n, A_n, C, dt, load=None, rhs_c=None,
                      dirichlet_dofs=(), dirichlet_values=None, gauge=None, tol=1e-10,
                      solver=None):
    """Implicit Euler step on the product (M v)_t + A v + C^T q = F, C v = G.

    Returns (v_n, multipliers, solver) so callers can reuse the factorisation
    when the operators do not change.
    """
    if dt <= 0:
        raise ValueError("time step must be positive")
    if solver is None:
        solver = SaddleSolver(M_n / dt + A_n, C, dirichlet_dofs, gauge=gauge, tol=tol)
    rhs = M_prev @ v_prev / dt
    if load is not None:
        rhs = rhs + load
    v, lam = solver.solve(rhs, rhs_c, dirichlet_values)
    return v, lam, solver
