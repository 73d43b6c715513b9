"""Decentralized finite-horizon LQ control with one major and many minor agents.

The package solves the gain recursions, runs the optimal (conditional-mean
based) and best linear (LLMS based) strategies in closed loop, and checks the
decomposition and orthogonality results that make those strategies optimal.
"""

from .controllers import CertaintyEquivalent, CustomLinear, FunctionStrategy, best_linear, optimal, state_feedback
from .model import (
    AgentTopology,
    CostSpec,
    NoiseSpec,
    Scenario,
    ScenarioError,
    SystemMatrices,
    assemble_global,
    load_scenario,
    validate_scenario,
)
from .noise import Gaussian, GaussianMixture, Laplace, PointMass, Uniform
from .riccati import gain_schedule, op_F, op_G, op_K, op_R, solve_global, solve_local
from .simulation import draw_batch, draw_primitives, evaluate, rollout, run_batch

__version__ = "0.1.0"
