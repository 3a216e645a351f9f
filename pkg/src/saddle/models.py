"""Models module. Imports and exposes the main model classes."""

from .autodiff import Tape, Var
from .dynamics import Dynamics, StepScheme
from .game import GameObjective, GameSpec, StrategyPair
from .minimax import MinMaxSolver
from .nn import NetworkParams
from .oracle import ControlGrid, GridValue

__all__ = [
    "ControlGrid",
    "Dynamics",
    "GameObjective",
    "GameSpec",
    "GridValue",
    "MinMaxSolver",
    "NetworkParams",
    "StepScheme",
    "StrategyPair",
    "Tape",
    "Var",
]
