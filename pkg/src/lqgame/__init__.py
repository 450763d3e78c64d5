"""Partially observed linear-quadratic zero-sum stochastic differential games."""
from .errors import (BlowUpError, ConditionError, DataError, LQGameError, SimulationError,
                     SingularMatrixError, ValidationError)
from .model import ProblemSpec, TimeGrid, check_conditions, load_spec, spec_from_dict, validate_spec
from .solvers import SolvedGame, solve_game, solve_P, solve_p, solve_sigma
from .synthesis import build_laws, closed_loop, diagonalize

__version__ = "0.1.0"
