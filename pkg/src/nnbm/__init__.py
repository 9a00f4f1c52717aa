"""Mean-field inference and learning for nonnegative Boltzmann machines."""

__version__ = "0.1.0"

from .errors import (ConvergenceError, DomainError, NnbmError, StabilityError,  # noqa: F401
                     UnsupportedSizeError)
from .model import (Dataset, MomentStats, NnbmModel, Topology,  # noqa: F401
                    build_orientation_tuning, build_square_grid, energy, sample_moments,
                    validate)
from .tap import (MomentState, SolverConfig, approx_log_likelihood,  # noqa: F401
                  free_energy_2nd, naive_mf_solve, tap_solve)
from .response import (LambdaField, ResponseState, covariance_matrix,  # noqa: F401
                        diagonal_matching, isusp_solve, susp_solve)
