"""Adaptive P2 finite elements for the membrane obstacle problem.

The contact constraint is enforced by a consistent, multiplier-free
Galerkin least squares penalty and the resulting semismooth system is
solved by a damped Newton method.
"""
from .assembly import Forms, ProblemData
from .benchmarks import get_case
from .estimator import AdaptOptions, adapt_loop, dorfler_mark, element_indicators
from .fespace import FeSpace, build_space
from .mesh import Mesh, build_lshape_mesh, build_square_mesh, refine
from .solver import SolverError, SolverOptions, newton_solve

__all__ = [
    "AdaptOptions", "FeSpace", "Forms", "Mesh", "ProblemData", "SolverError", "SolverOptions",
    "adapt_loop", "build_lshape_mesh", "build_space", "build_square_mesh", "dorfler_mark",
    "element_indicators", "get_case", "newton_solve", "refine",
]
__version__ = "0.1.0"
