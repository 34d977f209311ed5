"""Optimal-trial-space Petrov-Galerkin solvers for linear transport."""

from .exceptions import *  # noqa: F401,F403
from .problem import TransportProblem, catalog, catalog_names, load_problem, validate
from .grid import TensorGrid, classify_faces, extend_grid
from .fe1d import Fe1D, build_1d_matrices, eval_basis
from .assembly import assemble, assemble_adjoint, assemble_adjoint_general, assemble_rhs, build_spaces
from .solver import Solution, TransportSolver, discretize, evaluate, post_process, solve_full
from .analysis import check_optimality, convergence_study, l2_error, linf_error
from .rb import (
    FullOrderModel,
    ReducedBasisSolver,
    hierarchical_estimate,
    load_model,
    online_solve,
    save_model,
    strong_greedy,
)

__version__ = "0.1.0"
