"""Taylor-Hood finite elements for transformed instationary Stokes problems."""
from .space import MixedSpace, build_space, cell_space, dirichlet_square_space, epsilon_space
from .assembly import (TransformedOperators, assemble_operators, boundary_pressure_load,
                       divergence_matrix, divergence_rows, load_vector, mass_rate,
                       pressure_mean_row, transport_matrix, vector_mass, viscous_matrix)
from .solver import SaddleSolver, solve_saddle, step_instationary
from .diagnostics import epsilon_korn_constant, estimate_korn_constant, estimate_poincare_constant

__all__ = [
    "MixedSpace", "build_space", "cell_space", "dirichlet_square_space", "epsilon_space",
    "TransformedOperators", "assemble_operators", "boundary_pressure_load", "divergence_matrix",
    "divergence_rows", "load_vector", "mass_rate", "pressure_mean_row", "transport_matrix",
    "vector_mass", "viscous_matrix", "SaddleSolver", "solve_saddle", "step_instationary",
    "epsilon_korn_constant", "estimate_korn_constant", "estimate_poincare_constant",
]
