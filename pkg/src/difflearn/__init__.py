"""Diffusion learning over networks with local updates and partial participation.

The package simulates agents that run several stochastic-gradient steps on
their own data between communication rounds, participate in each round only
with some probability, and combine neighbor iterates through a doubly
stochastic matrix. A companion theory module evaluates the closed-form
steady-state mean-square deviation of the same scheme so simulated learning
curves can be checked against predictions.
"""

__version__ = "0.1.0"

from .activation import (ActivationError, ActivationModel, combine_matrix,
                         effective_matrix, expected_matrix, expected_step_product,
                         expected_step_sizes, step_sizes)
from .config import ConfigError, RunConfig
from .engine import (DivergenceError, SimulationConfig, SubsetActivation,
                     TrajectoryRecord, apply_preset, convergence_time,
                     mean_trajectory, measure_moment, measure_msd, run)
from .problems import (ProblemError, QuadraticProblem, RegressionDataset,
                       generate_synthetic, load_dataset, save_dataset)
from .theory import (MsdInputs, MsdReport, StabilityError, approx_activation,
                     approx_local_updates, bvec, estimate_expectations,
                     msd_value, unbvec)
from .topology import (PerronConvergenceError, Topology, TopologyError,
                       build_metropolis, complete, from_edges, is_primitive,
                       path, perron_vector, random_geometric, ring,
                       validate_combination)

__all__ = [
    "ActivationError", "ActivationModel", "combine_matrix", "effective_matrix",
    "expected_matrix", "expected_step_product", "expected_step_sizes", "step_sizes",
    "ConfigError", "RunConfig",
    "DivergenceError", "SimulationConfig", "SubsetActivation", "TrajectoryRecord",
    "apply_preset", "convergence_time", "mean_trajectory", "measure_moment",
    "measure_msd", "run",
    "ProblemError", "QuadraticProblem", "RegressionDataset", "generate_synthetic",
    "load_dataset", "save_dataset",
    "MsdInputs", "MsdReport", "StabilityError", "approx_activation",
    "approx_local_updates", "bvec", "estimate_expectations", "msd_value", "unbvec",
    "PerronConvergenceError", "Topology", "TopologyError", "build_metropolis",
    "complete", "from_edges", "is_primitive", "path", "perron_vector",
    "random_geometric", "ring", "validate_combination",
    "__version__",
]
