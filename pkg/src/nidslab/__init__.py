"""Decentralized proximal-gradient optimization with network-independent step sizes.

Modules
-------
netgraph    graphs, mixing matrices, spectral checks
stackmat    stacked-iterate algebra and the M-norm
objectives  local smooth and proximable terms, problem generators
algorithms  NIDS, EXTRA/PG-EXTRA and DIGing-ATC steppers
analysis    fixed-point certificates, Lyapunov values, rates
harness     config-driven experiments and trace export
"""

__version__ = "0.1.0"

from .algorithms import ALGORITHMS, NidsState, StepSizes, iterate, make_step_sizes
from .analysis import (
    FixedPointCertificate,
    NidsMonitor,
    RateCertificate,
    certify_point,
    empirical_contraction,
    lyapunov_value,
    theoretical_rho,
)
from .errors import (
    ConfigurationError,
    ConvergenceError,
    DivergenceError,
    DomainError,
    NidsLabError,
    NotApplicableError,
    NumericalError,
)
from .harness import ExperimentConfig, RunTrace, export_trace, load_trace, run_experiment
from .netgraph import (
    Graph,
    MixingMatrix,
    generate_graph,
    laplacian_weights,
    metropolis_weights,
    spectral_summary,
    validate_mixing,
)
from .objectives import ProblemInstance, generate_lasso_problem, generate_sensing_problem

__all__ = [
    "ALGORITHMS",
    "ConfigurationError",
    "ConvergenceError",
    "DivergenceError",
    "DomainError",
    "ExperimentConfig",
    "FixedPointCertificate",
    "Graph",
    "MixingMatrix",
    "NidsLabError",
    "NidsMonitor",
    "NidsState",
    "NotApplicableError",
    "NumericalError",
    "ProblemInstance",
    "RateCertificate",
    "RunTrace",
    "StepSizes",
    "certify_point",
    "empirical_contraction",
    "export_trace",
    "generate_graph",
    "generate_lasso_problem",
    "generate_sensing_problem",
    "iterate",
    "laplacian_weights",
    "load_trace",
    "lyapunov_value",
    "make_step_sizes",
    "metropolis_weights",
    "run_experiment",
    "spectral_summary",
    "theoretical_rho",
    "validate_mixing",
]
