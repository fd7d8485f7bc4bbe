"""Compare direct epsilon solves with the homogenised memory Darcy model.

Both sides are compared in fixed reference coordinates: per-cell averages of
the transformed micro velocity (extended by zero into the inclusions) against
the macro velocity averaged over the same cells, and the micro pressure with
its solid parts filled by the cell-wise fluid mean against the macro pressure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import time

import numpy as np

from .geometry import tile_epsilon_domain
from .io import write_table
from .stokes_fem.direct import solve_direct_epsilon
from .stokes_fem.elements import QUAD_POINTS, QUAD_WEIGHTS, element_geometry

log = logging.getLogger(__name__)

PASS = "PASS"
INCONCLUSIVE = "InconclusiveConvergence"   # a flag in the report, never raised


@dataclass
class ComparisonReport:
    epsilons: list
    velocity_errors: list
    pressure_errors: list
    apriori_norms: list
    runtimes: list = field(default_factory=list)
    verdict: str = ""

    def rows(self):
        order = np.argsort(self.epsilons)[::-1]
        return [(self.epsilons[i], self.velocity_errors[i], self.pressure_errors[i],
                 self.apriori_norms[i]) for i in order]


def solid_fan(dmesh):
    """Triangles (vertices, triangles, cell index) filling every inclusion polygon."""
    cell_edges = dmesh.interface_edges
    n_iface = len(dmesh.cell_mesh.interface_edges)
    cell_of_edge = np.repeat(np.arange(dmesh.n * dmesh.n), n_iface)
    centers = np.array([dmesh.cell_origin(k) for k in range(dmesh.n * dmesh.n)]) \
        + dmesh.epsilon * np.asarray(dmesh.cell_mesh.geometry.inclusion_center)
    nv = len(dmesh.vertices)
    verts = np.vstack([dmesh.vertices, centers])
    tris = np.c_[cell_edges, nv + cell_of_edge]
    return verts, tris, cell_of_edge


def _rule(vertices, triangles):
    p0, B, det, _ = element_geometry(vertices, triangles)
    pts = p0[:, None, :] + np.einsum("tij,qj->tqi", B, QUAD_POINTS)
    w = 0.5 * np.abs(det)[:, None] * QUAD_WEIGHTS[None, :]
    return pts, w


def cell_average_velocity(space, dmesh, u):
    """eps^{-2} int_{eps(k+Y)} u dy per cell for a P2 velocity extended by zero."""
    uq, _ = space.velocity_at_quadrature(u)
    _, w = space.quadrature()
    ncell = dmesh.n * dmesh.n
    out = np.zeros((ncell, 2))
    for i in range(2):
        out[:, i] = np.bincount(dmesh.triangle_cell, weights=(w * uq[..., i]).sum(1),
                                minlength=ncell)
    return out / dmesh.epsilon**2


def cell_fluid_means(space, dmesh, p):
    """Fluid mean of a P1 pressure in every cell."""
    pq = space.pressure_at_quadrature(p)
    _, w = space.quadrature()
    ncell = dmesh.n * dmesh.n
    area = np.bincount(dmesh.triangle_cell, weights=w.sum(1), minlength=ncell)
    return np.bincount(dmesh.triangle_cell, weights=(w * pq).sum(1), minlength=ncell) / area


def extend_pressure_cellwise(space, dmesh, p):
    """Pressure on the whole square: p on fluid elements, fluid cell mean on the inclusions.

    Returns (fluid quadrature values, solid quadrature values, cell means).
    """
    means = cell_fluid_means(space, dmesh, p)
    fluid = space.pressure_at_quadrature(p)
    _, _, scell = solid_fan(dmesh)
    solid = np.repeat(means[scell][:, None], len(QUAD_WEIGHTS), axis=1)
    return fluid, solid, means


def macro_cell_averages(macro_mesh, v_elem, dmesh, space):
    """eps^{-2} int over each eps-cell of a per-element macro velocity."""
    pts, w = space.quadrature()
    fv, ft, fc = solid_fan(dmesh)
    spts, sw = _rule(fv, ft)
    ncell = dmesh.n * dmesh.n
    out = np.zeros((ncell, 2))
    for P, W, cells in ((pts, w, dmesh.triangle_cell), (spts, sw, fc)):
        e = macro_mesh.locate(P.reshape(-1, 2)).reshape(P.shape[:2])
        vals = v_elem[e]
        for i in range(2):
            out[:, i] += np.bincount(cells, weights=(W * vals[..., i]).sum(1), minlength=ncell)
    return out / dmesh.epsilon**2


def _trapezoid(values, times):
    values = np.asarray(values, dtype=float)
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(times)))


def compare_trajectories(traj, dmesh, macro_mesh, macro_field):
    """Time-integrated L2 errors (velocity from t_0, pressure from t_1)."""
    space = traj.space
    times = traj.times
    eps = dmesh.epsilon
    pts, w = space.quadrature()
    fv, ft, fc = solid_fan(dmesh)
    spts, sw = _rule(fv, ft)
    ev2 = np.zeros(len(times))
    ep2 = np.zeros(len(times))
    for n in range(len(times)):
        micro = cell_average_velocity(space, dmesh, traj.velocity[n])
        macro = macro_cell_averages(macro_mesh, macro_field.velocity[n], dmesh, space)
        ev2[n] = eps**2 * float(((micro - macro) ** 2).sum())
        if n == 0:
            continue
        fluid, solid, _ = extend_pressure_cellwise(space, dmesh, traj.pressure[n])
        pm_f = macro_mesh.evaluate_p1(macro_field.pressure[n], pts.reshape(-1, 2)).reshape(fluid.shape)
        pm_s = macro_mesh.evaluate_p1(macro_field.pressure[n], spts.reshape(-1, 2)).reshape(solid.shape)
        ep2[n] = float((w * (fluid - pm_f) ** 2).sum() + (sw * (solid - pm_s) ** 2).sum())
    return np.sqrt(_trapezoid(ev2, times)), np.sqrt(_trapezoid(ep2[1:], times[1:]))


def judge(velocity_errors, pressure_errors, epsilons, atol=1e-10):
    """PASS when both sequences strictly decrease with eps (or vanish), else the inconclusive flag."""
    order = np.argsort(epsilons)[::-1]
    ve = np.asarray(velocity_errors)[order]
    pe = np.asarray(pressure_errors)[order]
    if len(order) < 3:
        return INCONCLUSIVE
    if max(ve.max(), pe.max()) < atol:
        return PASS
    if np.all(np.diff(ve) < 0) and np.all(np.diff(pe) < 0):
        return PASS
    return INCONCLUSIVE


def write_report(path, report: ComparisonReport, scenario_hash):
    """report.csv without wall-clock data so reruns are byte-identical."""
    rows = []
    for eps, ve, pe, ap in report.rows():
        rows.append((eps, ve, pe, ap["w_L2"], ap["eps_grad_w_L2"], ap["q_L2"]))
    write_table(path, {"scenario": scenario_hash, "verdict": report.verdict,
                       "criterion": "monotone-decrease-proxy"},
                ["epsilon", "velocity_error", "pressure_error", "w_L2", "eps_grad_w_L2", "q_L2"],
                rows)


def write_timings(path, report: ComparisonReport, scenario_hash):
    write_table(path, {"scenario": scenario_hash}, ["epsilon", "runtime_s"],
                list(zip(report.epsilons, report.runtimes)))


def summary(report: ComparisonReport) -> str:
    lines = ["epsilon    velocity_error   pressure_error   |w|        eps|grad w|   |q|"]
    for eps, ve, pe, ap in report.rows():
        lines.append(f"{eps:<10.4g} {ve:<16.6e} {pe:<16.6e} {ap['w_L2']:<10.4e} "
                     f"{ap['eps_grad_w_L2']:<13.4e} {ap['q_L2']:.4e}")
    lines.append(f"verdict: {report.verdict} (monotone decrease used as the convergence proxy)")
    return "\n".join(lines)


def convergence_study(ev, cell_mesh, macro_mesh, macro_field, times, eps_list, mu=1.0,
                      force=None, p_b=None, max_dofs=None, tol=1e-10):
    """Direct solves for every eps in ``eps_list`` compared with one macro solution."""
    report = ComparisonReport(epsilons=[], velocity_errors=[], pressure_errors=[],
                              apriori_norms=[], runtimes=[])
    for eps in sorted(eps_list, reverse=True):
        n = int(round(1.0 / eps))
        start = time.perf_counter()
        dmesh = tile_epsilon_domain(cell_mesh, n)
        traj = solve_direct_epsilon(dmesh, ev, times, mu=mu, force=force, p_b=p_b,
                                    max_dofs=max_dofs, tol=tol)
        ve, pe = compare_trajectories(traj, dmesh, macro_mesh, macro_field)
        report.epsilons.append(1.0 / n)
        report.velocity_errors.append(ve)
        report.pressure_errors.append(pe)
        report.apriori_norms.append(traj.apriori)
        report.runtimes.append(time.perf_counter() - start)
        log.info("eps=1/%d: velocity error %.4e, pressure error %.4e", n, ve, pe)
    report.verdict = judge(report.velocity_errors, report.pressure_errors, report.epsilons)
    return report
