from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from saddle import autodiff as ad
from saddle.config import MinMaxConfig
from saddle.dynamics import Dynamics, StepScheme
from saddle.game import GameSpec


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator so every test sees the same draws."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> MinMaxConfig:
    """Training settings small enough for a unit test."""
    return MinMaxConfig(
        epochs=3, inner_steps=2, batch_size=16, hidden_layers=1, width=4, log_every=1
    )


@pytest.fixture
def line_game() -> GameSpec:
    """One-dimensional game x' = a + 0.2 b with phi(x) = x on two steps."""

    def velocity(x: ad.Operand, a: ad.Operand, b: ad.Operand) -> ad.Operand:
        del x
        return ad.add(a, ad.mul(0.2, b))

    return GameSpec(
        "line",
        Dynamics(1, 1, 1, velocity),
        lambda x: x,
        None,
        1.0,
        2,
        StepScheme(),
        (-1.0,),
        (1.0,),
    )


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[[str], Path]:
    """Write config text into the test's tmp dir, pointing [run] out there."""

    def write(text: str) -> Path:
        path = tmp_path / "run.ini"
        path.write_text(text.replace("@OUT@", str(tmp_path / "out")), encoding="utf-8")
        return path

    return write
