"""Neural-network solver for ODE initial value problems built on an operator split.

The right-hand side is split as f = g + h.  The associated problem
y' = g(y) is solved exactly or by RK4, and a small network, scaled by x,
learns the remaining part of the solution by collocation.  Training lives
in :func:`lieode.train.train`.
"""
from .assoc import AssociatedSolution, solve, solve_closed_form, solve_numeric
from .expr import parse
from .net import MlpParams
from .problem import IvpSystem, OperatorSplit, autonomize, reduce_order, split, translate_origin
from .train import TrainConfig, TrainReport, TrialSolution, metrics, new_trial, trial_eval

__all__ = [
    "AssociatedSolution", "IvpSystem", "MlpParams", "OperatorSplit", "TrainConfig", "TrainReport",
    "TrialSolution", "autonomize", "metrics", "new_trial", "parse", "reduce_order", "solve",
    "solve_closed_form", "solve_numeric", "split", "trial_eval", "translate_origin",
]
