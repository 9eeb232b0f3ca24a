"""Fully distributed adaptive continuous-time optimization over unbalanced digraphs.

Agents on a strongly connected, possibly unbalanced digraph minimize the sum
of private, possibly nonconvex costs. No agent knows the left eigenvector
of the Laplacian, the graph's spectrum, or any convexity constant.
"""

__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402
from .graph import (Digraph, GraphError, SpectralCertificate, build_laplacian,  # noqa: E402
                    certify, fig1_digraph, is_balanced, is_strongly_connected,
                    left_eigenvector, load_edge_list, matrix_exponential_limit_check,
                    spectral_certificate)
from .costs import (CostFunction, HuberSpec, centralized_minimizer,  # noqa: E402
                    example1_costs, global_cost, gradient_check, huber_cost, huber_scalar)
from .dynamics import (NetworkField, NetworkState, compact_field, error_coordinates,  # noqa: E402
                       initial_state, stationary_pair, vector_field)
from .integrator import IntegratorConfig, Trajectory, integrate, rk4_step  # noqa: E402
from .analysis import (ConvergenceReport, LyapunovConstants, convergence_report,  # noqa: E402
                       lyapunov_constants, lyapunov_decrease_check, lyapunov_value,
                       optimality_residual)

__all__ = [
    "__version__", "BACKEND",
    "Digraph", "GraphError", "SpectralCertificate", "build_laplacian", "certify",
    "fig1_digraph", "is_balanced", "is_strongly_connected", "left_eigenvector",
    "load_edge_list", "matrix_exponential_limit_check", "spectral_certificate",
    "CostFunction", "HuberSpec", "centralized_minimizer", "example1_costs", "global_cost",
    "gradient_check", "huber_cost", "huber_scalar",
    "NetworkField", "NetworkState", "compact_field", "error_coordinates", "initial_state",
    "stationary_pair", "vector_field",
    "IntegratorConfig", "Trajectory", "integrate", "rk4_step",
    "ConvergenceReport", "LyapunovConstants", "convergence_report", "lyapunov_constants",
    "lyapunov_decrease_check", "lyapunov_value", "optimality_residual",
]
