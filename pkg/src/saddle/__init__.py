"""Neural feedback strategies for zero-sum differential games.

This package trains per-step feedback strategies of a discretized
differential game by min-max gradient methods, and provides grid and
closed-form reference values to measure them against.
"""

import logging
import os
import sys

from .benchmarks import Preset, preset, preset_names
from .config import MinMaxConfig, RunConfig
from .exceptions import SaddleException
from .game import GameSpec, StrategyPair, train, value_estimate
from .models import Dynamics, NetworkParams, StepScheme, Tape, Var

__all__ = [
    "Dynamics",
    "GameSpec",
    "MinMaxConfig",
    "NetworkParams",
    "Preset",
    "RunConfig",
    "SaddleException",
    "StepScheme",
    "StrategyPair",
    "Tape",
    "Var",
    "preset",
    "preset_names",
    "train",
    "value_estimate",
]

# Configure logging for the entire package
logger = logging.getLogger(__name__)
_level = os.environ.get("SADDLE_LOG_LEVEL", "INFO").upper()
logger.setLevel(_level if _level in logging.getLevelNamesMapping() else logging.INFO)

# Only add handler if none exists to avoid duplicates
if not logger.handlers:
    handler = logging.StreamHandler(sys.stdout)
    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    )
    handler.setFormatter(formatter)
    logger.addHandler(handler)
