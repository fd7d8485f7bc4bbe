"""Scenario-driven command line entry point.

    memdarcy --scenario run.toml --mode macro --cache-dir ~/.cache/memdarcy

Exit status: 0 on success, 2 when a solver (or the resource guard) fails,
3 when the scenario does not parse or validate, 1 for any other library error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time

import numpy as np

from . import errors
from .cell_problems import build_kernel, read_kernel, write_kernel
from .errors import CacheCorruption, ResourceGuard
from .geometry import build_cell_geometry, export_mesh, tile_epsilon_domain, triangulate_cell
from .io import write_table
from .kinematics import MicrostructureEvolution, RadiusLaw
from .macro_darcy import (MacroMesh, MacroProblem, boundary_pressure, constant_force, run_macro,
                          write_macro_outputs)
from .scenario import MODES, parse_scenario
from .stokes_fem.diagnostics import epsilon_korn_constant, estimate_poincare_constant
from .stokes_fem.space import epsilon_space
from .verify import convergence_study, summary, write_report, write_timings

log = logging.getLogger("memdarcy")

EXIT_OK, EXIT_OTHER, EXIT_SOLVER, EXIT_INVALID = 0, 1, 2, 3


def exit_code(exc) -> int:
    if isinstance(exc, (errors.ValidationError, errors.ParseError, errors.MarginViolation,
                        errors.DegenerateInclusion, errors.NonMonotoneLaw)):
        return EXIT_INVALID
    if isinstance(exc, (errors.SolverError, errors.KinematicsError, ResourceGuard)):
        return EXIT_SOLVER
    return EXIT_OTHER


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser():
    p = argparse.ArgumentParser(prog="memdarcy",
                                description="Memory Darcy homogenisation on evolving microstructures")
    p.add_argument("--scenario", required=True, help="scenario TOML file")
    p.add_argument("--mode", choices=MODES, help="override the scenario's mode")
    p.add_argument("--cache-dir", help="kernel cache directory (default: $MEMDARCY_CACHE_DIR "
                                       "or OUTPUT_DIR/cache)")
    p.add_argument("--max-dofs", type=int, help="refuse direct solves with more unknowns")
    p.add_argument("--emit-vtk", type=_bool, default=False, metavar="BOOL",
                   help="also write VTK snapshots")
    p.add_argument("--output-dir", default="memdarcy_out", help="artifact directory")
    return p


# -- pipeline pieces -------------------------------------------------------------------

def evolution_from(sc):
    e, g = sc.evolution, sc.geometry
    law = RadiusLaw(e["family"], float(g["r0"]), float(e["a"]), float(e["omega"]), e["g"])
    return MicrostructureEvolution(law, center=tuple(float(c) for c in g["center"]),
                                   R_c=float(e["R_c"]), T=float(e["T"]))


def cell_mesh_from(sc):
    g = sc.geometry
    geom = build_cell_geometry(float(g["r0"]), tuple(float(c) for c in g["center"]))
    return triangulate_cell(geom, float(g["h_cell"]))


def times_from(sc):
    return np.linspace(0.0, float(sc.evolution["T"]), int(sc.grids["N_time"]) + 1)


def obtain_kernel(sc, ev, cell_mesh, macro_mesh, cache_dir):
    """Kernel from the cache when present and intact, otherwise built and cached."""
    key = sc.kernel_key()
    path = os.path.join(cache_dir, key)
    if os.path.exists(os.path.join(path, "kernel.csv")):
        try:
            kernel = read_kernel(path, key)
            log.info("kernel loaded from cache %s", path)
            return kernel
        except CacheCorruption as exc:
            log.warning("discarding corrupt kernel cache: %s", exc)
    log.info("building kernel (cache miss at %s)", path)
    kernel = build_kernel(ev, macro_mesh.centroids, cell_mesh, times_from(sc),
                          mu=float(sc.physics["mu"]), v0_init=sc.physics["v0_init"],
                          tol=float(sc.tolerances["linear"]))
    log.info("kernel diagnostics: %s", kernel.diagnostics)
    write_kernel(path, kernel, key)
    return kernel


def _macro(sc, kernel, macro_mesh):
    ph = sc.physics
    problem = MacroProblem(macro_mesh, kernel, mu=float(ph["mu"]), force=constant_force(ph["f"]),
                           p_b=boundary_pressure(ph["p_b"]), tol=float(sc.tolerances["linear"]))
    return run_macro(problem)


def _diagnostics(sc, ev, cell_mesh, output_dir, max_dofs, out):
    T = float(sc.evolution["T"])
    rows = []
    for eps in sorted(sc.grids["eps_list"], reverse=True):
        n = int(round(1.0 / eps))
        dmesh = tile_epsilon_domain(cell_mesh, n)
        size = epsilon_space(dmesh).n_velocity
        if max_dofs is not None and size > max_dofs:
            raise ResourceGuard(f"epsilon=1/{n}: {size} unknowns exceed the cap of {max_dofs}")
        pc = estimate_poincare_constant(epsilon_space(dmesh), 1.0 / n)
        rows.append((1.0 / n, "poincare", 0.0, pc))
        print(f"eps=1/{n}: scaled Poincare constant {pc:.6g}", file=out)
        for t in (0.0, 0.5 * T, T):
            kc = epsilon_korn_constant(dmesh, ev, t)
            rows.append((1.0 / n, "korn", t, kc))
            print(f"eps=1/{n}: Korn-type constant at t={t:g}: {kc:.6g}", file=out)
    write_table(os.path.join(output_dir, "diagnostics.csv"), {"scenario": sc.hash},
                ["epsilon", "quantity", "time", "value"], rows)


def run(mode, sc, output_dir, cache_dir=None, max_dofs=None, emit_vtk=False, out=None):
    """Execute one pipeline; raises library errors (see exit_code)."""
    out = sys.stdout if out is None else out
    os.makedirs(output_dir, exist_ok=True)
    cache_dir = cache_dir or os.environ.get("MEMDARCY_CACHE_DIR") or os.path.join(output_dir, "cache")
    ev = evolution_from(sc)
    ev.check_admissible()
    cell_mesh = cell_mesh_from(sc)
    log.info("scenario %s, mode %s, cell mesh %d vertices (min angle %.1f deg)", sc.hash, mode,
             len(cell_mesh.vertices), cell_mesh.min_angle())
    if mode == "diagnostics":
        _diagnostics(sc, ev, cell_mesh, output_dir, max_dofs, out)
        return
    macro_mesh = MacroMesh.structured(int(sc.grids["macro_n"]))
    kernel = obtain_kernel(sc, ev, cell_mesh, macro_mesh, cache_dir)
    if mode == "kernel":
        write_kernel(output_dir, kernel, sc.hash)
        export_mesh(os.path.join(output_dir, "cell_mesh"), cell_mesh, emit_vtk)
        print(f"kernel: N={kernel.N}, {kernel.n_points} macro points, "
              f"{kernel.n_distinct} distinct cell computations, "
              f"diagonal defect {kernel.diagonal_defect():.3e}", file=out)
        return
    field = _macro(sc, kernel, macro_mesh)
    write_macro_outputs(output_dir, macro_mesh, field, sc.hash, emit_vtk)
    print(f"macro: {kernel.N} steps, max relative mass-balance defect "
          f"{field.flux_balance[1:].max():.3e}", file=out)
    if mode == "macro":
        return
    ph = sc.physics
    report = convergence_study(ev, cell_mesh, macro_mesh, field, times_from(sc),
                               sc.grids["eps_list"], mu=float(ph["mu"]),
                               force=constant_force(ph["f"]), p_b=boundary_pressure(ph["p_b"]),
                               max_dofs=max_dofs, tol=float(sc.tolerances["linear"]))
    write_report(os.path.join(output_dir, "report.csv"), report, sc.hash)
    write_timings(os.path.join(output_dir, "timings.csv"), report, sc.hash)
    print(summary(report), file=out)


def _attach_log(output_dir):
    os.makedirs(output_dir, exist_ok=True)
    handler = logging.FileHandler(os.path.join(output_dir, "run.log"), mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    return handler


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = _attach_log(args.output_dir)
    start = time.perf_counter()
    try:
        sc = parse_scenario(args.scenario)
        mode = args.mode or sc.mode
        run(mode, sc, args.output_dir, args.cache_dir, args.max_dofs, args.emit_vtk)
        log.info("finished in %.2f s", time.perf_counter() - start)
        return EXIT_OK
    except errors.MemDarcyError as exc:
        code = exit_code(exc)
        detail = getattr(exc, "diagnostics", None) or getattr(exc, "violations", None)
        log.error("%s: %s%s", type(exc).__name__, exc, f" | {detail}" if detail else "")
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        log.error("I/O failure: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER
    finally:
        log.removeHandler(handler)
        handler.close()


if __name__ == "__main__":
    sys.exit(main())
