"""Cost-signal deception attacks on discounted linear-quadratic-Gaussian learners."""

__version__ = "0.1.0"

from .attack import (
    AttackSolution,
    AttackTarget,
    FeasibilityReport,
    feasibility_check,
    falsified_cost,
    synthesize,
)
from .adp import AdpConfig, AdpTrace, adp_attack_run, adp_learn
from .batch import Dataset, batch_attack, batch_learn, generate_dataset
from .bounds import PerturbationBounds, perturbation_bounds, tau, verify_bounds
from .errors import AttackInfeasible, ConvergenceError, LearningAborted, LQGError, ParameterError
from .lqg_core import (
    CostParams,
    LinearSystem,
    Policy,
    QMatrix,
    ValueQuad,
    dlqg,
    policy_iteration,
    policy_value,
    q_matrix,
    riccati_solve,
    simulate,
)

__all__ = [
    "AdpConfig", "AdpTrace", "AttackInfeasible", "AttackSolution", "AttackTarget", "ConvergenceError",
    "CostParams", "Dataset", "FeasibilityReport", "LQGError", "LearningAborted", "LinearSystem",
    "ParameterError", "PerturbationBounds", "Policy", "QMatrix", "ValueQuad", "adp_attack_run",
    "adp_learn", "batch_attack", "batch_learn", "dlqg", "falsified_cost", "feasibility_check",
    "generate_dataset", "perturbation_bounds", "policy_iteration", "policy_value", "q_matrix",
    "riccati_solve", "simulate", "synthesize", "tau", "verify_bounds",
]
