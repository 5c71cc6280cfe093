"""Permutation-matched approximate Bayesian computation.

Likelihood-free inference for hierarchical models whose observations fall
into exchangeable compartments: rejection and sequential Monte Carlo
samplers that accept on the best compartment matching (solved as a linear
assignment problem), plus over-sampling and under-matching sequential
strategies, built-in simulators, and a benchmark harness.
"""

from .assignment import AssignmentResult, solve_full, solve_rectangular, solve_under_match
from .data import Matching, ObservedData, SimulatedData
from .diagnostics import (
    TraceRow,
    budget_curve,
    effective_sample_size,
    ks_distance,
    unique_particle_rate,
)
from .distance import cost_matrix, full_distance, restricted_distance
from .exceptions import (
    BudgetExceededError,
    ConfigurationError,
    ExtinctionError,
    NotAvailableError,
    PermABCError,
    SimulationFailure,
)
from .ingestion import (
    EpidemicTable,
    SyntheticDataset,
    draw_true_parameters,
    generate_synthetic,
    load_epidemic_csv,
    to_observed_data,
)
from .models import (
    GaussianHierarchy,
    Model,
    ModelSpec,
    ParameterVector,
    RidgeGaussian,
    SIRModel,
    UniformToy,
    build_model,
)
from .permutations import (
    StratifiedProposal,
    partial_derangement_count,
    random_derangement,
    sample_from_stratum,
    subfactorial,
)
from .rejection import (
    AcceptedSample,
    PermABC,
    StratifiedPermABC,
    VanillaABC,
    critical_epsilon,
)
from .smc import (
    KernelState,
    Particle,
    PermABCSMC,
    adapt_epsilon,
    compute_kernel_state,
    duplicate_for_transition,
    move_particle,
    next_l,
    next_m,
    systematic_resample,
)
from .streams import substream

__version__ = "0.1.0"

__all__ = [
    "AcceptedSample",
    "AssignmentResult",
    "BudgetExceededError",
    "ConfigurationError",
    "EpidemicTable",
    "ExtinctionError",
    "GaussianHierarchy",
    "KernelState",
    "Matching",
    "Model",
    "ModelSpec",
    "NotAvailableError",
    "ObservedData",
    "ParameterVector",
    "Particle",
    "PermABC",
    "PermABCError",
    "PermABCSMC",
    "RidgeGaussian",
    "SIRModel",
    "SimulatedData",
    "SimulationFailure",
    "StratifiedPermABC",
    "StratifiedProposal",
    "SyntheticDataset",
    "TraceRow",
    "UniformToy",
    "VanillaABC",
    "adapt_epsilon",
    "budget_curve",
    "build_model",
    "compute_kernel_state",
    "cost_matrix",
    "critical_epsilon",
    "draw_true_parameters",
    "duplicate_for_transition",
    "effective_sample_size",
    "full_distance",
    "generate_synthetic",
    "ks_distance",
    "load_epidemic_csv",
    "move_particle",
    "next_l",
    "next_m",
    "partial_derangement_count",
    "random_derangement",
    "restricted_distance",
    "sample_from_stratum",
    "solve_full",
    "solve_rectangular",
    "solve_under_match",
    "subfactorial",
    "substream",
    "systematic_resample",
    "to_observed_data",
    "unique_particle_rate",
]
