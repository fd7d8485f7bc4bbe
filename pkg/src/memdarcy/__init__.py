"""Homogenised Stokes flow through evolving periodic microstructures.

Cell problems on a fixed reference cell yield a memory permeability kernel,
which drives a macroscopic Darcy law with memory; direct epsilon-scale solves
check the homogenised model empirically.
"""
from .errors import MemDarcyError
from .geometry import build_cell_geometry, tile_epsilon_domain, triangulate_cell
from .kinematics import MicrostructureEvolution, RadiusLaw, porosity, porosity_rate
from .cell_problems import MemoryKernel, build_kernel, stationary_permeability
from .macro_darcy import MacroMesh, MacroProblem, run_macro
from .scenario import Scenario, parse_scenario
from .verify import convergence_study

__version__ = "0.1.0"

__all__ = [
    "MemDarcyError", "build_cell_geometry", "tile_epsilon_domain", "triangulate_cell",
    "MicrostructureEvolution", "RadiusLaw", "porosity", "porosity_rate", "MemoryKernel",
    "build_kernel", "stationary_permeability", "MacroMesh", "MacroProblem", "run_macro",
    "Scenario", "parse_scenario", "convergence_study",
]
