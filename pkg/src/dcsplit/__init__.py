"""Delay-optimal dual-connectivity traffic splitting under a blocking constraint."""

__version__ = "0.1.0"

from .model import ModelParams, State, StateSpace, enumerate_states, feasible_actions  # noqa: E402
from .policies import Policy, RandomizedMixture  # noqa: E402
from .solver import evaluate_policy, relative_value_iteration, uniformize  # noqa: E402
from .constrained import SolverOptions, solve_constrained  # noqa: E402
from .sim import SimConfig, simulate  # noqa: E402

__all__ = [
    "ModelParams",
    "State",
    "StateSpace",
    "enumerate_states",
    "feasible_actions",
    "Policy",
    "RandomizedMixture",
    "evaluate_policy",
    "relative_value_iteration",
    "uniformize",
    "SolverOptions",
    "solve_constrained",
    "SimConfig",
    "simulate",
]
