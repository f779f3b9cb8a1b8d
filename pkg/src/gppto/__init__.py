"""Adaptive informative path planning with a GP world belief and multimodal sensing."""

from .dynamics import DynamicsKind, DynamicsModel, Trajectory, linearize, rollout, step
from .environment import (BudgetModel, EnvironmentMap, SensorKind, SensorModel, generate_gp_map,
                          generate_map, load_map, path_cost, save_map, sense)
from .exceptions import ConditioningError, OutOfRegionError, SetupError, WeightConfigurationError
from .gp import (GaussianProcessBelief, Measurement, MeasurementSet, Posterior, SquaredExponential,
                 expected_improvement, grid_query_points, posterior, trace_variance,
                 variance_reduction)
from .harness import ExperimentConfig, run_episode, sweep, write_csv
from .objective import Objective, ObjectiveParams
from .optimizer import (BudgetConstraint, GPPTOPlanner, OptimizerConfig, descent_direction,
                        enforce_budget, optimize)

__version__ = "0.1.0"
