"""Evolving microstructure: radial blend maps, analytic Jacobians, porosity.

The reference cell map is

    psi(t, x, y) = c + rho(s; t, x) * (y - c) / s,   s = |y - c|,

where rho is linear (s * r / r0) inside the reference inclusion, a quintic Hermite
blend on [r0, R_c] and the identity beyond R_c. The blend is affine in the
current radius r, rho = alpha(s) + r * beta(s), so every time derivative is
r'(t, x) times the same expressions with rho replaced by beta.

Matrix convention: Psi[..., i, j] = d psi_i / d y_j and
dPsi[..., k, i, j] = d Psi_ij / d y_k.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .errors import NonMonotoneLaw, OutOfDomain, SingularMap

_DOMAIN_TOL = 1e-12


# ---------------------------------------------------------------------------
# radius laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RadiusLaw:
    """Named parametric family r(t, x) and its time derivative.

    family: "constant" | "linear" | "sinusoidal" | "macro"
    For "macro" the modulation is g(x) = sin(pi x1) sin(pi x2) ("sinsin") or 1 ("one").
    """

    family: str
    r0: float
    a: float = 0.0
    omega: float = 0.0
    g: str = "sinsin"

    def __post_init__(self):
        if self.family not in ("constant", "linear", "sinusoidal", "macro"):
            raise ValueError(f"unknown radius law family {self.family!r}")
        if self.g not in ("sinsin", "one"):
            raise ValueError(f"unknown macro modulation {self.g!r}")

    def modulation(self, x):
        x = np.asarray(x, dtype=float)
        if self.g == "one":
            return np.ones(x.shape[:-1])
        return np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])

    def radius(self, t, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        if self.family == "constant":
            return np.full(shape, self.r0)
        if self.family == "linear":
            return np.full(shape, self.r0 + self.a * t)
        if self.family == "sinusoidal":
            return np.full(shape, self.r0 + self.a * math.sin(self.omega * t))
        return self.r0 + self.a * t * self.modulation(x)

    def rate(self, t, x):
        x = np.asarray(x, dtype=float)
        shape = x.shape[:-1]
        if self.family == "constant":
            return np.zeros(shape)
        if self.family == "linear":
            return np.full(shape, float(self.a))
        if self.family == "sinusoidal":
            return np.full(shape, self.a * self.omega * math.cos(self.omega * t))
        return self.a * self.modulation(x)

    def is_static(self) -> bool:
        return self.family == "constant" or self.a == 0.0


# ---------------------------------------------------------------------------
# radial profile
# ---------------------------------------------------------------------------

# quintic Hermite basis on [0, 1] in power form (coefficients of tau^0..tau^5):
# value at 0, slope at 0, value at 1, slope at 1; second derivatives vanish at both ends
_H_VAL0 = np.array([1.0, 0.0, 0.0, -10.0, 15.0, -6.0])
_H_SLOPE0 = np.array([0.0, 1.0, 0.0, -6.0, 8.0, -3.0])
_H_VAL1 = np.array([0.0, 0.0, 0.0, 10.0, -15.0, 6.0])
_H_SLOPE1 = np.array([0.0, 0.0, 0.0, -4.0, 7.0, -3.0])


def blend_coefficients(r0, R_c):
    """Power-series coefficients in tau = (s - r0)/(R_c - r0) of alpha and beta."""
    L = R_c - r0
    alpha = _H_VAL1 * R_c + _H_SLOPE1 * L
    beta = _H_VAL0 + _H_SLOPE0 * L / r0
    return alpha, beta


def blend_profiles(s, r0, R_c):
    """Return (alpha, beta) with derivatives up to order 2 in s.

    rho(s) = alpha(s) + r * beta(s); both are arrays of shape (3,) + s.shape
    holding value, first and second derivative. On [r0, R_c] the profile is the
    quintic Hermite blend with matching value and slope and zero curvature at
    both ends, so rho is C^2 across r0 and R_c.
    """
    s = np.asarray(s, dtype=float)
    L = R_c - r0
    alpha = np.zeros((3,) + s.shape)
    beta = np.zeros((3,) + s.shape)
    inner = s < r0
    mid = (s >= r0) & (s < R_c)
    outer = s >= R_c
    beta[0, inner] = s[inner] / r0
    beta[1, inner] = 1.0 / r0
    tau = (s[mid] - r0) / L
    ca, cb = blend_coefficients(r0, R_c)
    P = np.polynomial.polynomial
    for d in range(3):
        alpha[d, mid] = P.polyval(tau, P.polyder(ca, d)) / L**d
        beta[d, mid] = P.polyval(tau, P.polyder(cb, d)) / L**d
    alpha[0, outer] = s[outer]
    alpha[1, outer] = 1.0
    return alpha, beta


def min_blend_slope(r, r0, R_c) -> float:
    """Minimum of rho'(s) over [r0, R_c] for current radius ``r``."""
    P = np.polynomial.polynomial
    ca, cb = blend_coefficients(r0, R_c)
    d = P.polyder(ca + r * cb)
    crit = [t.real for t in P.polyroots(P.polyder(d)) if abs(t.imag) < 1e-12 and 0 < t.real < 1]
    cand = np.array([0.0, 1.0] + crit)
    return float(P.polyval(cand, d).min() / (R_c - r0))


def _radial_functions(s, prof0, prof1, prof2):
    """g = rho/s, g', g'' and h = g'/s, h' for a radial profile rho (vectorised)."""
    with np.errstate(divide="ignore", invalid="ignore"):
        g = prof0 / s
        dg = prof1 / s - prof0 / s**2
        d2g = prof2 / s - 2 * prof1 / s**2 + 2 * prof0 / s**3
        hh = dg / s
        dh = (d2g * s - dg) / s**2
    return g, dg, hh, dh


def _map_jacobian(z, s, prof, region_linear):
    """Psi and dPsi for psi = c + rho(s)/s z with rho given by ``prof`` (3, n)."""
    g, dg, hh, dh = _radial_functions(s, prof[0], prof[1], prof[2])
    # inside the inclusion the map is linear; avoid 0/0 at the centre
    g = np.where(region_linear, prof[1], g)
    dg = np.where(region_linear, 0.0, dg)
    hh = np.where(region_linear, 0.0, hh)
    dh = np.where(region_linear, 0.0, dh)
    n = len(s)
    eye = np.eye(2)
    zz = z[:, :, None] * z[:, None, :]
    Psi = g[:, None, None] * eye + hh[:, None, None] * zz
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = np.where(region_linear[:, None], 0.0, z / s[:, None])
    dPsi = (dg[:, None, None, None] * zs[:, :, None, None] * eye[None, None]
            + dh[:, None, None, None] * zs[:, :, None, None] * zz[:, None, :, :])
    # h (delta_ik z_j + z_i delta_jk)
    t1 = np.einsum("ki,nj->nkij", eye, z)
    t2 = np.einsum("ni,jk->nkij", z, eye)
    dPsi = dPsi + hh[:, None, None, None] * (t1 + t2)
    return Psi.reshape(n, 2, 2), dPsi


def adjugate(M):
    """Adjugate of (..., 2, 2) matrices."""
    M = np.asarray(M, dtype=float)
    A = np.empty_like(M)
    A[..., 0, 0] = M[..., 1, 1]
    A[..., 0, 1] = -M[..., 0, 1]
    A[..., 1, 0] = -M[..., 1, 0]
    A[..., 1, 1] = M[..., 0, 0]
    return A


def det2(M):
    return M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]


@dataclass
class TransformJacobians:
    """Pointwise samples of the map and its derivatives (leading axis = points)."""

    psi: np.ndarray       # (n, 2)
    Psi: np.ndarray       # (n, 2, 2)
    J: np.ndarray         # (n,)
    A: np.ndarray         # (n, 2, 2) adjugate
    Ainv: np.ndarray      # (n, 2, 2) = Psi / J
    dPsi: np.ndarray      # (n, 2, 2, 2) [k, i, j]
    dAinv: np.ndarray     # (n, 2, 2, 2) [k, i, j] = d_k (A^{-1})_ij
    dt_psi: np.ndarray    # (n, 2)
    dt_Psi: np.ndarray    # (n, 2, 2)
    dt_J: np.ndarray      # (n,)
    dt_A: np.ndarray      # (n, 2, 2)

    @property
    def Psi_inv(self):
        return self.A / self.J[:, None, None]


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MicrostructureEvolution:
    """Radial blend evolution of a disk inclusion of reference radius r0."""

    law: RadiusLaw
    center: tuple = (0.5, 0.5)
    R_c: float = 0.45
    T: float = 1.0
    margin: float = 0.05

    @property
    def r0(self) -> float:
        return self.law.r0

    def is_static(self) -> bool:
        return self.law.is_static()

    def _check(self, t, y):
        if t < -_DOMAIN_TOL or t > self.T + _DOMAIN_TOL:
            raise OutOfDomain(f"time {t} outside [0, {self.T}]")
        if y.size and (y.min() < -_DOMAIN_TOL or y.max() > 1.0 + _DOMAIN_TOL):
            raise OutOfDomain("cell point outside the closed unit cell")

    def _prepare(self, t, x, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        self._check(t, y)
        x = np.asarray(x, dtype=float)
        xb = np.broadcast_to(x, y.shape) if x.ndim == 1 else x
        r = self.law.radius(t, xb)
        rdot = self.law.rate(t, xb)
        z = y - np.asarray(self.center)
        s = np.hypot(z[:, 0], z[:, 1])
        return y, r, rdot, z, s

    def evaluate_map(self, t, x, y):
        """psi_0(t, x, y) for points y of shape (n, 2) (or (2,))."""
        single = np.ndim(y) == 1
        y, r, _, z, s = self._prepare(t, x, y)
        alpha, beta = blend_profiles(s, self.r0, self.R_c)
        rho = alpha[0] + r * beta[0]
        inner = s < self.r0
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(inner, r / self.r0, rho / s)
        out = np.asarray(self.center) + scale[:, None] * z
        return out[0] if single else out

    def displacement(self, t, x, y):
        return self.evaluate_map(t, x, y) - np.atleast_2d(y) if np.ndim(y) > 1 \
            else self.evaluate_map(t, x, y) - np.asarray(y)

    def velocity(self, t, x, y):
        """d_t psi_0(t, x, y)."""
        y, _, rdot, z, s = self._prepare(t, x, y)
        _, beta = blend_profiles(s, self.r0, self.R_c)
        inner = s < self.r0
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(inner, 1.0 / self.r0, beta[0] / s)
        return (rdot * scale)[:, None] * z

    def jacobians(self, t, x, y, check=True) -> TransformJacobians:
        y, r, rdot, z, s = self._prepare(t, x, y)
        alpha, beta = blend_profiles(s, self.r0, self.R_c)
        inner = s < self.r0
        rho = alpha + r[None] * beta
        Psi, dPsi = _map_jacobian(z, s, rho, inner)
        dPsi_t, _ = _map_jacobian(z, s, beta, inner)
        dt_Psi = rdot[:, None, None] * dPsi_t
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(inner, r / self.r0, rho[0] / s)
            vscale = np.where(inner, 1.0 / self.r0, beta[0] / s)
        psi = np.asarray(self.center) + scale[:, None] * z
        dt_psi = (rdot * vscale)[:, None] * z
        J = det2(Psi)
        if check and (J <= 0).any():
            raise SingularMap(f"non-positive Jacobian determinant (min {J.min():.3e}) at t={t}")
        A = adjugate(Psi)
        Ainv = Psi / J[:, None, None]
        dt_A = adjugate(dt_Psi)
        dt_J = np.einsum("nij,nji->n", A, dt_Psi)
        # d_k J = tr(A d_k Psi)
        dJ = np.einsum("nij,nkji->nk", A, dPsi)
        dAinv = dPsi / J[:, None, None, None] \
            - Psi[:, None, :, :] * (dJ / J[:, None] ** 2)[:, :, None, None]
        return TransformJacobians(psi=psi, Psi=Psi, J=J, A=A, Ainv=Ainv, dPsi=dPsi,
                                  dAinv=dAinv, dt_psi=dt_psi, dt_Psi=dt_Psi,
                                  dt_J=dt_J, dt_A=dt_A)

    def check_admissible(self, n_t=101, n_x=5):
        """Sample the law on a (t, x) grid and reject non-invertible blends.

        Returns the smallest Jacobian determinant lower bound c_J found.
        """
        ts = np.linspace(0.0, self.T, n_t)
        g = (np.arange(n_x) + 0.5) / n_x
        xs = np.stack(np.meshgrid(g, g, indexing="ij"), -1).reshape(-1, 2)
        rs = np.concatenate([self.law.radius(t, xs) for t in ts])
        r_min, r_max = float(rs.min()), float(rs.max())
        if r_min <= 0.0:
            raise NonMonotoneLaw(f"radius law reaches non-positive radius {r_min}")
        if r_max >= self.R_c or r_max > 0.5 - self.margin:
            raise NonMonotoneLaw(
                f"radius {r_max} leaves the admissible range below R_c={self.R_c}")
        if not (self.r0 < self.R_c < 0.5):
            raise NonMonotoneLaw(f"cut-off radius {self.R_c} must lie in (r0, 1/2)")
        # rho' is affine in r, so extremes of r bound the slope
        slope = min(min_blend_slope(r_min, self.r0, self.R_c),
                    min_blend_slope(r_max, self.r0, self.R_c))
        if slope <= 0.0:
            raise NonMonotoneLaw(f"blend profile loses monotonicity (min slope {slope:.3e})")
        return self.jacobian_lower_bound(r_min, r_max)

    def jacobian_lower_bound(self, r_min, r_max, n_s=400):
        s = np.linspace(self.r0, self.R_c, n_s)
        alpha, beta = blend_profiles(s, self.r0, self.R_c)
        vals = []
        for r in (r_min, r_max):
            rho = alpha + r * beta
            vals.append((rho[0] / s * rho[1]).min())
        return float(min(vals + [1.0]))


# ---------------------------------------------------------------------------
# derived quantities
# ---------------------------------------------------------------------------

def piola_push(u, ev: MicrostructureEvolution, t, x, y):
    """Contravariant Piola transform u_hat(y) = A(y) u(psi(y)) of a callable field."""
    jac = ev.jacobians(t, x, y)
    vals = np.asarray(u(jac.psi), dtype=float)
    return np.einsum("nij,nj->ni", jac.A, vals)


def _polar_rule(r_in, r_out, n_radial, n_angle):
    xg, wg = np.polynomial.legendre.leggauss(n_radial)
    s = 0.5 * (r_out - r_in) * (xg + 1) + r_in
    ws = 0.5 * (r_out - r_in) * wg
    th = 2 * np.pi * (np.arange(n_angle) + 0.5) / n_angle
    S, TH = np.meshgrid(s, th, indexing="ij")
    W = (ws[:, None] * S) * (2 * np.pi / n_angle)
    return S.ravel(), TH.ravel(), W.ravel()


def _annulus_integral(ev, t, x, field, n_radial=8, n_angle=16):
    s, th, w = _polar_rule(ev.r0, ev.R_c, n_radial, n_angle)
    y = np.asarray(ev.center) + np.c_[s * np.cos(th), s * np.sin(th)]
    jac = ev.jacobians(t, x, y)
    return float(w @ getattr(jac, field))


def porosity(ev: MicrostructureEvolution, t, x) -> float:
    """Theta(t, x) = int_{Y*} J_0 dy.

    J_0 = 1 outside R_c; on the blend annulus the radial integrand is a
    polynomial, so Gauss quadrature in the radius is exact.
    """
    outside = 1.0 - math.pi * ev.R_c**2
    return outside + _annulus_integral(ev, t, x, "J")


def porosity_rate(ev: MicrostructureEvolution, t, x) -> float:
    """d Theta / dt = int_{Y*} d_t J_0 dy."""
    return _annulus_integral(ev, t, x, "dt_J")


def pressure_corrector_shift(q1_hat, grad_p, ev, t, x, y, inverse=False):
    """q1' = q1 - (psi_0 - y) . grad_p (or the inverse map when ``inverse``)."""
    d = ev.evaluate_map(t, x, y) - np.atleast_2d(y)
    shift = d @ np.asarray(grad_p, dtype=float)
    q1_hat = np.asarray(q1_hat, dtype=float)
    return q1_hat + shift if inverse else q1_hat - shift


# ---------------------------------------------------------------------------
# epsilon-scaled realisation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpsilonRealisation:
    """psi_eps(t, x) = eps * psi_0(t, x_cell, {x/eps}) + eps * floor(x/eps)."""

    ev: MicrostructureEvolution
    n: int

    @property
    def epsilon(self) -> float:
        return 1.0 / self.n

    def cell_of(self, x):
        k = np.floor(np.asarray(x, dtype=float) * self.n).astype(int)
        return np.clip(k, 0, self.n - 1)

    def cell_center(self, ij):
        return (np.asarray(ij, dtype=float) + 0.5) * self.epsilon

    def local(self, x, ij=None):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ij = self.cell_of(x) if ij is None else np.atleast_2d(ij)
        y = np.clip(x * self.n - ij, 0.0, 1.0)
        return y, ij

    def jacobians(self, t, x, ij=None) -> TransformJacobians:
        """Jacobian samples of psi_eps at macro points x (cells ``ij`` resolve seams)."""
        eps = self.epsilon
        y, ij = self.local(x, ij)
        jac = self.ev.jacobians(t, self.cell_center(ij), y)
        jac.psi = eps * (jac.psi + ij)
        jac.dt_psi = eps * jac.dt_psi
        jac.dPsi = jac.dPsi / eps
        jac.dAinv = jac.dAinv / eps
        return jac

    def evaluate_map(self, t, x, ij=None):
        y, ij = self.local(x, ij)
        return self.epsilon * (self.ev.evaluate_map(t, self.cell_center(ij), y) + ij)
