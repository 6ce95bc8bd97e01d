"""Multi-agent trajectory optimization by consensus ADMM with warm-started active-set QPs."""
from .admm import (MODES, AgentSolveError, SolveReport, SolverConfig, consensus_project,
                   run)
from .model import (AgentModel, InfeasibleScenarioError, ParameterError, Scenario,
                    circle_scenario, double_integrator, load_scenario, problem_dimensions,
                    save_scenario, straight_line_reference)
from .qpsolve import (QpData, QpSetupError, QpSolution, QpStatus, QpUsageError, create,
                      solve_cold, solve_hot, solve_warm)
from .riccati import affine_lqr, backward_pass, build_stage_costs, forward_pass

__version__ = "0.1.0"

__all__ = [
    "MODES", "AgentSolveError", "SolveReport", "SolverConfig", "consensus_project", "run",
    "AgentModel", "InfeasibleScenarioError", "ParameterError", "Scenario", "circle_scenario",
    "double_integrator", "load_scenario", "problem_dimensions", "save_scenario",
    "straight_line_reference", "QpData", "QpSetupError", "QpSolution", "QpStatus",
    "QpUsageError", "create", "solve_cold", "solve_hot", "solve_warm", "affine_lqr",
    "backward_pass", "build_stage_costs", "forward_pass",
]
