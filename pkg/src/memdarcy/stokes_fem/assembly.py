"""Assembly of the transformed Stokes forms on a MixedSpace.

Coefficient fields are passed as TransformJacobians sampled at the quadrature
points of every triangle, flattened in (triangle, point) order. ``None`` means
the identity map.
"""
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix

from ..errors import AssemblyOverflow, SingularMap
from .elements import p2_values

CHUNK = 8192


def _scatter(rows, cols, vals, shape):
    return coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


def _reshape(arr, nt):
    return arr.reshape((nt, -1) + arr.shape[1:])


def _check_coeffs(jac):
    if jac is None:
        return
    if not np.all(np.isfinite(jac.Psi)) or not np.all(np.isfinite(jac.dAinv)):
        raise AssemblyOverflow("non-finite coefficient at a quadrature point")
    if (jac.J <= 0).any():
        raise SingularMap(f"non-positive Jacobian determinant {jac.J.min():.3e} at a quadrature point")


def _strain(vals, grads, Ainv, dAinv, PsiInv):
    """Transformed gradients E[t, q, b, j, l, i] of the basis functions N_b e_j.

    E = Psi^{-T} grad(A^{-1} u) with (grad w)_{ki} = d_k w_i.
    """
    # T[t,q,b,j,k,i] = dAinv[k,i,j] N_b + Ainv[i,j] dN_b[k]
    T = np.einsum("tqkij,qb->tqbjki", dAinv, vals) \
        + np.einsum("tqij,tqbk->tqbjki", Ainv, grads)
    return np.einsum("tqkl,tqbjki->tqbjli", PsiInv, T)


def weighted_mass(space, G):
    """int (G u) . phi for a matrix coefficient G of shape (nt*nq, 2, 2) or (nt, nq, 2, 2)."""
    nt = len(space.triangles)
    _, w = space.quadrature()
    vals, _ = space.p2_basis()
    dofs = space.elem_vel_dofs
    n = space.n_velocity
    G = np.asarray(G).reshape(nt, -1, 2, 2)
    loc = np.einsum("tq,qa,qb,tqij->taibj", w, vals, vals, G).reshape(nt, 12, 12)
    return _scatter(dofs[:, :, None].repeat(12, 2), dofs[:, None, :].repeat(12, 1), loc, (n, n))


def mass_coefficient(jac):
    return np.einsum("nki,nkj->nij", jac.Psi, jac.Psi) / jac.J[:, None, None]


def mass_rate_coefficient(jac):
    """Time derivative of Psi^T Psi / J."""
    PtP = np.einsum("nki,nkj->nij", jac.Psi, jac.Psi)
    dPtP = np.einsum("nki,nkj->nij", jac.dt_Psi, jac.Psi)
    dPtP = dPtP + np.swapaxes(dPtP, 1, 2)
    J = jac.J[:, None, None]
    return dPtP / J - PtP * jac.dt_J[:, None, None] / J**2


def vector_mass(space, jac=None):
    """int (G u) . phi with G = Psi^T Psi / J (identity when ``jac`` is None)."""
    nt = len(space.triangles)
    if jac is None:
        nq = space.quadrature()[1].shape[1]
        return weighted_mass(space, np.broadcast_to(np.eye(2), (nt, nq, 2, 2)))
    _check_coeffs(jac)
    return weighted_mass(space, mass_coefficient(jac))


def mass_rate(space, jac=None):
    """Matrix of the time derivative of the mass coefficient."""
    if jac is None:
        n = space.n_velocity
        return coo_matrix((n, n)).tocsr()
    return weighted_mass(space, mass_rate_coefficient(jac))


def viscous_matrix(space, jac=None, mu=1.0, symmetric=True):
    """Viscous form int mu J (2 sym E_u : sym E_phi) or, with ``symmetric=False``, int mu J E_u : E_phi."""
    nt = len(space.triangles)
    _, w = space.quadrature()
    vals, grads = space.p2_basis()
    dofs = space.elem_vel_dofs
    n = space.n_velocity
    _check_coeffs(jac)
    rows, cols, data = [], [], []
    for s in range(0, nt, CHUNK):
        sl = slice(s, min(s + CHUNK, nt))
        m = sl.stop - sl.start
        if jac is None:
            eye = np.eye(2)
            E = np.einsum("tqbl,ij->tqbjli", grads[sl], eye)
            Jw = w[sl]
        else:
            Ainv = _reshape(jac.Ainv, nt)[sl]
            dAinv = _reshape(jac.dAinv, nt)[sl]
            J = _reshape(jac.J, nt)[sl]
            PsiInv = _reshape(jac.A, nt)[sl] / J[..., None, None]
            E = _strain(vals, grads[sl], Ainv, dAinv, PsiInv)
            Jw = w[sl] * J
        if symmetric:
            E = E + np.swapaxes(E, -1, -2)
            coef = 0.5 * mu * Jw
        else:
            coef = mu * Jw
        loc = np.einsum("tq,tqajli,tqbkli->tajbk", coef, E, E).reshape(m, 12, 12)
        d = dofs[sl]
        rows.append(d[:, :, None].repeat(12, 2))
        cols.append(d[:, None, :].repeat(12, 1))
        data.append(loc)
    return _scatter(np.concatenate(rows), np.concatenate(cols), np.concatenate(data), (n, n))


def transport_matrix(space, jac):
    """Transport form from the moving frame.

    C(u, phi) = -int (dt_Psi^T A^{-1} u + Psi^T (D(A^{-1} u)) Psi^{-1} dt_psi) . phi
    where D is the Jacobian matrix in y. Zero for a static map.
    """
    nt = len(space.triangles)
    n = space.n_velocity
    if jac is None:
        return coo_matrix((n, n)).tocsr()
    _check_coeffs(jac)
    _, w = space.quadrature()
    vals, grads = space.p2_basis()
    dofs = space.elem_vel_dofs
    J = _reshape(jac.J, nt)
    Psi = _reshape(jac.Psi, nt)
    Ainv = _reshape(jac.Ainv, nt)
    dAinv = _reshape(jac.dAinv, nt)
    PsiInv = _reshape(jac.A, nt) / J[..., None, None]
    vel = np.einsum("tqij,tqj->tqi", PsiInv, _reshape(jac.dt_psi, nt))
    Dw = np.einsum("tqkij,tqk->tqij", dAinv, vel)
    P = np.einsum("tqki,tqkj->tqij", _reshape(jac.dt_Psi, nt), Ainv) \
        + np.einsum("tqki,tqkj->tqij", Psi, Dw)
    G = np.einsum("tqki,tqkj->tqij", Psi, Psi) / J[..., None, None]
    adv = np.einsum("tqbk,tqk->tqb", grads, vel)             # grad N_b . w
    loc = -(np.einsum("tq,qa,qb,tqij->taibj", w, vals, vals, P)
            + np.einsum("tq,qa,tqb,tqij->taibj", w, vals, adv, G)).reshape(nt, 12, 12)
    return _scatter(dofs[:, :, None].repeat(12, 2), dofs[:, None, :].repeat(12, 1), loc, (n, n))


def divergence_matrix(space):
    """B[q, u] = -int q div u (P1 pressure rows, P2 velocity columns)."""
    nt = len(space.triangles)
    _, w = space.quadrature()
    _, g2 = space.p2_basis()
    v1, _ = space.p1_basis()
    loc = -np.einsum("tq,qa,tqbj->tabj", w, v1, g2).reshape(nt, 3, 12)
    pd = space.elem_pres_dofs
    vd = space.elem_vel_dofs
    return _scatter(pd[:, :, None].repeat(12, 2), vd[:, None, :].repeat(3, 1), loc,
                    (space.n_pressure, space.n_velocity))


def divergence_rows(space, funcs_q, rule=None):
    """Rows -int d_k div u for extra pressure functions sampled at quadrature points.

    funcs_q: (nk, nt, nq) values at the points of ``rule``.
    """
    nt = len(space.triangles)
    _, w = space.quadrature(rule)
    _, g2 = space.p2_basis(rule)
    vd = space.elem_vel_dofs
    rows = []
    for fq in np.asarray(funcs_q):
        loc = -np.einsum("tq,tq,tqbj->tbj", w, fq, g2).reshape(nt, 12)
        rows.append(np.bincount(vd.ravel(), weights=loc.ravel(), minlength=space.n_velocity))
    return np.array(rows).reshape(-1, space.n_velocity)


def load_vector(space, fq):
    """int f . phi for f sampled at quadrature points, shape (nt, nq, 2) or (nt*nq, 2)."""
    nt = len(space.triangles)
    _, w = space.quadrature()
    vals, _ = space.p2_basis()
    fq = np.asarray(fq).reshape(nt, -1, 2)
    loc = np.einsum("tq,qa,tqi->tai", w, vals, fq).reshape(nt, 12)
    return np.bincount(space.elem_vel_dofs.ravel(), weights=loc.ravel(), minlength=space.n_velocity)


def pressure_mean_row(space):
    """int phi_i for the P1 basis (zero-mean gauge)."""
    _, w = space.quadrature()
    v1, _ = space.p1_basis()
    loc = np.einsum("tq,qa->ta", w, v1)
    return np.bincount(space.elem_pres_dofs.ravel(), weights=loc.ravel(), minlength=space.n_pressure)


def p1_mass(space):
    _, w = space.quadrature()
    v1, _ = space.p1_basis()
    loc = np.einsum("tq,qa,qb->tab", w, v1, v1)
    pd = space.elem_pres_dofs
    return _scatter(pd[:, :, None].repeat(3, 2), pd[:, None, :].repeat(3, 1), loc,
                    (space.n_pressure, space.n_pressure))


def boundary_pressure_load(space, edges, p_func, n_gauss=3):
    """-int_edges p phi . nu with outward normal nu (natural traction condition)."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    out = np.zeros(space.n_velocity)
    if len(edges) == 0:
        return out
    V = space.vertices
    tri_of = {}
    for t, tri in enumerate(space.triangles):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            tri_of[(min(tri[a], tri[b]), max(tri[a], tri[b]))] = t
    xg, wg = np.polynomial.legendre.leggauss(n_gauss)
    sg = 0.5 * (xg + 1)
    wg = 0.5 * wg
    for a, b in edges:
        t = tri_of[(min(a, b), max(a, b))]
        tri = space.triangles[t]
        la, lb = int(np.flatnonzero(tri == a)[0]), int(np.flatnonzero(tri == b)[0])
        ref = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        xi = ref[la] + sg[:, None] * (ref[lb] - ref[la])
        phys = V[a] + sg[:, None] * (V[b] - V[a])
        length = np.linalg.norm(V[b] - V[a])
        tang = (V[b] - V[a]) / length
        nu = np.array([tang[1], -tang[0]])
        third = V[tri[3 - la - lb]]
        if np.dot(third - V[a], nu) > 0:
            nu = -nu
        pv = np.asarray(p_func(phys), dtype=float)
        N = p2_values(xi)                                    # (ng, 6)
        contrib = -np.einsum("g,g,ga->a", wg * length, pv, N)
        dofs = space.elem_vel_dofs[t]
        out[dofs[0::2]] += contrib * nu[0]
        out[dofs[1::2]] += contrib * nu[1]
    return out


@dataclass
class TransformedOperators:
    """Velocity operators of the transformed problem at one time.

    The product-form time derivative d/dt(M v) + A1 v + C v is what the time
    stepper discretises; A2 = C + Mdot/2 is the skew-type splitting for which
    d/dt(M v).v = (M v_t).v + (Mdot v).v/2 balances, so A1 + A2 - Mdot/2 = A1 + C.
    """

    M: object
    A1: object
    C: object
    Mdot: object
    B: object
    t: float = 0.0

    @property
    def A2(self):
        return self.C + 0.5 * self.Mdot

    def step_matrix(self, dt):
        return self.M / dt + self.A1 + self.C


def assemble_operators(space, jac=None, mu=1.0, scale=1.0, t=0.0, symmetric=True):
    """Assemble M, A1 (viscosity mu * scale^2), C, Mdot and B at time t."""
    return TransformedOperators(
        M=vector_mass(space, jac),
        A1=viscous_matrix(space, jac, mu * scale**2, symmetric=symmetric),
        C=transport_matrix(space, jac),
        Mdot=mass_rate(space, jac),
        B=divergence_matrix(space), t=t)
