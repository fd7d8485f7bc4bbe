"""Spectral estimates of the scaled Poincare and Korn-type constants on perforated domains."""
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from ..errors import EigenFailure
from ..kinematics import EpsilonRealisation
from .assembly import _strain, vector_mass, viscous_matrix
from .space import epsilon_space


def _smallest_eigenvalue(K, M):
    try:
        vals = eigsh(K, k=1, M=M, sigma=0.0, which="LM", return_eigenvectors=False)
    except (ArpackNoConvergence, RuntimeError) as exc:
        raise EigenFailure(f"eigenvalue iteration failed: {exc}") from exc
    lam = float(vals[0])
    if not np.isfinite(lam) or lam <= 0.0:
        raise EigenFailure(f"non-positive smallest eigenvalue {lam:.3e}")
    return lam


def _free_block(space, A):
    """Restrict a scalar (first velocity component) block to non-Dirichlet nodes."""
    nn = space.n_nodes
    free = np.setdiff1d(np.arange(nn), space.dirichlet_nodes)
    return A[:nn, :nn][free][:, free].tocsc()


def estimate_poincare_constant(space, epsilon=1.0):
    """sqrt(1 / lambda_min) / eps for the Laplacian with the space's Dirichlet set."""
    K = _free_block(space, viscous_matrix(space, None, 1.0, symmetric=False))
    M = _free_block(space, vector_mass(space, None))
    return float(np.sqrt(1.0 / _smallest_eigenvalue(K, M)) / epsilon)


def korn_matrix(space, Psi_inv):
    """int (Psi^{-T} grad v + (Psi^{-T} grad v)^T) : (same for w) dy.

    Psi_inv: (nt*nq, 2, 2) samples of Psi^{-1}; None for the identity.
    """
    nt = len(space.triangles)
    _, w = space.quadrature()
    vals, grads = space.p2_basis()
    nq = w.shape[1]
    eye = np.broadcast_to(np.eye(2), (nt, nq, 2, 2))
    zero = np.zeros((nt, nq, 2, 2, 2))
    P = eye if Psi_inv is None else np.asarray(Psi_inv).reshape(nt, nq, 2, 2)
    E = _strain(vals, grads, eye, zero, P)
    S = E + np.swapaxes(E, -1, -2)
    loc = np.einsum("tq,tqajli,tqbkli->tajbk", w, S, S).reshape(nt, 12, 12)
    d = space.elem_vel_dofs
    n = space.n_velocity
    return coo_matrix((loc.ravel(), (d[:, :, None].repeat(12, 2).ravel(),
                                     d[:, None, :].repeat(12, 1).ravel())), shape=(n, n)).tocsr()


def estimate_korn_constant(space, Psi_inv=None, epsilon=1.0):
    """Smallest eps^2 ||Psi^{-T} grad v + transpose||^2 / ||v||^2 over constrained v."""
    free = np.setdiff1d(np.arange(space.n_velocity), space.dirichlet_dofs())
    K = korn_matrix(space, Psi_inv)[free][:, free].tocsc()
    M = vector_mass(space, None)[free][:, free].tocsc()
    return float(epsilon**2 * _smallest_eigenvalue(K, M))


def epsilon_korn_constant(dmesh, ev, t):
    """Korn-type constant of the epsilon-scaled map at time t on a tiled mesh."""
    space = epsilon_space(dmesh)
    pts, _ = space.quadrature()
    ij = np.stack([dmesh.triangle_cell % dmesh.n, dmesh.triangle_cell // dmesh.n], axis=1)
    jac = EpsilonRealisation(ev, dmesh.n).jacobians(t, pts.reshape(-1, 2),
                                                    np.repeat(ij, pts.shape[1], axis=0))
    return estimate_korn_constant(space, jac.Psi_inv, dmesh.epsilon)
