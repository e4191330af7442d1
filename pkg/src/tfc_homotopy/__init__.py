"""Homotopy continuation with convex and TFC-based homotopy functions."""

from .core import (AuxiliaryProblem, ConfigurationError, PathEvent, PathTrace,
                   TrackerConfig, ZeroProblem, make_auxiliary)
from .homotopy import (BasisFunction, ConvexHomotopy, SupportCase, TfcHomotopy,
                       convex_homotopy, exp_kappa2_basis, q_matrices,
                       regularize_omega, vectorize_omega)
from .linalg import (NoConvergenceError, SingularMatrixError, SingularPointError,
                     determinant, jacobian_fd, newton_solve, solve_dense, svd)
from .problems import PROBLEMS, get_problem
from .switching import SwitchProblem, SwitchResult, solve_switch
from .tracking import dcm_track, pam_tangent, pam_track, two_layer_track

__version__ = "0.1.0"
