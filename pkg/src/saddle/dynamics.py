"""Dynamics module. Time discretization of the controlled ODE x' = f(x, a, b)."""

import logging
from dataclasses import dataclass
from enum import StrEnum
from typing import Callable

from . import autodiff as ad
from .autodiff import Operand
from .const import DEFAULT_SUBSTEPS
from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)

# f(x, a, b) on batches: (rows, d), (rows, n_A), (rows, n_B) -> (rows, d)
VelocityFn = Callable[[Operand, Operand, Operand], Operand]

# Row-wise scalar cost: (rows, d) -> (rows, 1)
CostFn = Callable[[Operand], Operand]


@dataclass(frozen=True)
class Dynamics:
    """Controlled vector field.

    Attributes:
        state_dim: State dimension d.
        control_dim_a: Dimension of the minimizing player's control.
        control_dim_b: Dimension of the maximizing player's control.
        velocity: Batched, tape-traceable f(x, a, b).
        lipschitz: Optional constants ([f]_1, [f]_2, [f]_3) in x, a and b.
    """

    state_dim: int
    control_dim_a: int
    control_dim_b: int
    velocity: VelocityFn
    lipschitz: tuple[float, float, float] | None = None

    def __call__(self, x: Operand, a: Operand, b: Operand) -> Operand:
        return self.velocity(x, a, b)

    def __repr__(self) -> str:
        return (
            f"<Dynamics: d={self.state_dim}, "
            f"n_A={self.control_dim_a}, n_B={self.control_dim_b}>"
        )


class SchemeKind(StrEnum):
    """Integrator used inside one macro time step."""

    EULER = "euler"
    HEUN = "heun-multistep"


@dataclass(frozen=True)
class StepScheme:
    """Substep integrator: ``substeps`` steps of size dt/substeps."""

    kind: SchemeKind = SchemeKind.HEUN
    substeps: int = DEFAULT_SUBSTEPS

    def __post_init__(self) -> None:
        if self.substeps < 1:
            raise ConfigurationError(f"Substeps must be >= 1, got {self.substeps}")


def _check_step(h: float) -> None:
    if not h > 0:
        raise ConfigurationError(f"Step size must be positive, got {h}")


def euler_step(
    dynamics: Dynamics, x: Operand, a: Operand, b: Operand, h: float
) -> Operand:
    """x + h f(x, a, b)."""
    _check_step(h)
    return ad.add(x, ad.mul(h, dynamics(x, a, b)))


def heun_step(
    dynamics: Dynamics, x: Operand, a: Operand, b: Operand, h: float
) -> Operand:
    """x + (h/2) (f(x, a, b) + f(x + h f(x, a, b), a, b))."""
    _check_step(h)
    velocity = dynamics(x, a, b)
    predictor = ad.add(x, ad.mul(h, velocity))
    return ad.add(x, ad.mul(h / 2, ad.add(velocity, dynamics(predictor, a, b))))


def _substep(
    dynamics: Dynamics, kind: SchemeKind, x: Operand, a: Operand, b: Operand, h: float
) -> Operand:
    if kind == SchemeKind.EULER:
        return euler_step(dynamics, x, a, b, h)
    return heun_step(dynamics, x, a, b, h)


def step_with_max(
    dynamics: Dynamics,
    x: Operand,
    a: Operand,
    b: Operand,
    dt: float,
    scheme: StepScheme,
    obstacle: CostFn | None,
) -> tuple[Operand, Operand | None]:
    """Advance one macro step and track the obstacle along the substeps.

    Controls are held constant over all substeps.

    Returns:
        The end state Y_p and the maximum of the obstacle over Y_0..Y_{p-1}
        (None without an obstacle).
    """
    h = dt / scheme.substeps
    state = x
    running: Operand | None = None
    for _ in range(scheme.substeps):
        if obstacle is not None:
            value = obstacle(state)
            running = value if running is None else ad.maximum(running, value)
        state = _substep(dynamics, scheme.kind, state, a, b, h)
    return state, running


def multi_step_F(  # pylint: disable=invalid-name
    dynamics: Dynamics,
    x: Operand,
    a: Operand,
    b: Operand,
    dt: float,
    substeps: int = DEFAULT_SUBSTEPS,
    kind: SchemeKind = SchemeKind.HEUN,
) -> Operand:
    """Y_p after ``substeps`` substeps of size dt/substeps."""
    end, _ = step_with_max(dynamics, x, a, b, dt, StepScheme(kind, substeps), None)
    return end


def substep_max_G(  # pylint: disable=invalid-name
    dynamics: Dynamics,
    x: Operand,
    a: Operand,
    b: Operand,
    dt: float,
    substeps: int,
    obstacle: CostFn,
    kind: SchemeKind = SchemeKind.HEUN,
) -> Operand:
    """Maximum of the obstacle over Y_0 = x, ..., Y_{p-1}; Y_p is excluded."""
    _, running = step_with_max(
        dynamics, x, a, b, dt, StepScheme(kind, substeps), obstacle
    )
    assert running is not None
    return running
