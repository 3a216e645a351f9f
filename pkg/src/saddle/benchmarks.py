"""Benchmarks module. Preset games and the benchmark sweeps built on them."""

import logging
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Literal, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Operand
from .config import MinMaxConfig
from .const import (
    BOX_ENLARGEMENT,
    DEFAULT_RESOLUTION,
    NORM_GUARD,
    ROTATION_SUCCESS_THRESHOLD,
)
from .dynamics import Dynamics, StepScheme
from .exceptions import ConfigurationError
from .game import GameSpec, algorithm1_global, value_estimate
from .metrics import Box, convergence_order, local_l1_error
from .nn import OutputActivation
from .oracle import (
    EX1_TIME_OFFSET,
    ControlGrid,
    GridValue,
    RateReport,
    analytic_example1,
    analytic_example2,
    analytic_example3,
    example1_value,
    grid_dpp_solve,
    o_tau_rate_check,
)

logger = logging.getLogger(__name__)

ReferenceKind = Literal["analytic", "grid-dpp", "none"]
ValueFn = Callable[[Array], Array]


@dataclass(frozen=True)
class Preset:
    """A ready-to-train game with its recommended settings and reference."""

    name: str
    spec: GameSpec
    config: MinMaxConfig
    reference_kind: ReferenceKind
    reference: ValueFn | None = None
    slice: tuple[float, ...] = ()
    reversed_config: MinMaxConfig | None = None
    legacy_dynamics: bool = False
    description: str = field(default="", compare=False)

    def evaluation_box(self, resolution: int = DEFAULT_RESOLUTION) -> Box:
        """Evaluation grid over Omega, or over its leading axes for sliced presets."""
        axes = self.spec.state_dim - len(self.slice)
        return Box.cube(self.spec.lower[:axes], self.spec.upper[:axes], resolution)

    def reference_values(
        self,
        box: Box,
        dpp_resolution: int = DEFAULT_RESOLUTION,
        control_points: int = 21,
    ) -> Array | None:
        """Reference V_0 at the nodes of ``box`` (None without a reference)."""
        if self.reference_kind == "analytic":
            assert self.reference is not None
            return self.reference(box.points())
        if self.reference_kind == "grid-dpp":
            grid = _dpp_reference(
                self.name,
                self.spec.steps,
                self.legacy_dynamics,
                dpp_resolution,
                control_points,
            )
            return grid(box.points())
        return None

    def __repr__(self) -> str:
        return f"<Preset: {self.name} ({self.reference_kind})>"


def _inf_norm(x: Operand) -> Operand:
    return ad.max_reduce(ad.absolute(x))


def _box_target(x: Operand) -> Operand:
    return ad.clamp(ad.sub(_inf_norm(x), 1.0), -0.5, 0.5)


def _rotation_dynamics(c: float) -> Dynamics:
    def velocity(x: Operand, a: Operand, b: Operand) -> Operand:
        rotated = ad.concat([ad.neg(ad.column(x, 1)), ad.column(x, 0)])
        radial = ad.div(x, ad.maximum(ad.norm2(x), NORM_GUARD))
        return ad.add(ad.mul(a, rotated), ad.mul(c, ad.mul(b, radial)))

    return Dynamics(2, 1, 1, velocity)


def _ball(
    center: tuple[float, ...], radius: float, sign: float = 1.0
) -> Callable[[Operand], Operand]:
    def level(x: Operand) -> Operand:
        distance = ad.norm2(ad.sub(x, np.asarray(center)))
        return ad.mul(sign, ad.sub(distance, radius))

    return level


def _ex1(steps: int, obstacle: bool) -> Preset:
    c, horizon = 0.3, 0.6 * np.pi
    terminal = lambda x: example1_value(x, EX1_TIME_OFFSET, c)  # noqa: E731
    g = None
    if obstacle:
        avoid = _ball((0.5, 1.5), 0.5, sign=-1.0)
        g = lambda x: ad.clamp(avoid(x), -0.2, 0.2)  # noqa: E731
    spec = GameSpec(
        "ex1-obstacle" if obstacle else "ex1",
        _rotation_dynamics(c),
        terminal,
        g,
        horizon,
        steps,
        StepScheme(),
        (-4.0, -4.0),
        (4.0, 4.0),
    )
    config = MinMaxConfig(epochs=500, inner_steps=5, batch_size=1000)
    if obstacle:
        return Preset(
            spec.name,
            spec,
            config,
            "grid-dpp",
            description="Rotation game with a disc obstacle",
        )
    return Preset(
        spec.name,
        spec,
        config,
        "analytic",
        lambda x: analytic_example1(horizon, x, c),
        description="Rotation game, closed-form value",
    )


def _ex2(steps: int) -> Preset:
    # x1 is steered by the minimizing player a, whatever b does
    def velocity(x: Operand, a: Operand, b: Operand) -> Operand:
        del x
        return ad.concat(
            [ad.mul(2.0, ad.clamp(ad.sub(b, ad.mul(2.0, a)), -1.0, 1.0)), ad.add(a, b)]
        )

    horizon = 0.4
    spec = GameSpec(
        "ex2",
        Dynamics(2, 1, 1, velocity),
        _box_target,
        None,
        horizon,
        steps,
        StepScheme(),
        (-3.0, -3.0),
        (3.0, 3.0),
    )
    config = MinMaxConfig(epochs=500, inner_steps=5, batch_size=1000)
    return Preset(
        "ex2", spec, config, "analytic", lambda x: analytic_example2(horizon, x),
        description="Game with a value; closed form known",
    )


def _ex3(steps: int, sign: int, legacy: bool) -> Preset:
    def velocity(x: Operand, a: Operand, b: Operand) -> Operand:
        del x
        gap = ad.absolute(ad.sub(a, b))
        first = ad.clamp(gap, -1.0, 1.0) if legacy else ad.sub(1.0, gap)
        return ad.concat([ad.mul(2.0, first), ad.add(a, b)])

    horizon = 0.4
    name = "ex3-minmax" if sign > 0 else "ex3-maxmin"
    spec = GameSpec(
        name,
        Dynamics(2, 1, 1, velocity),
        _box_target,
        None,
        horizon,
        steps,
        StepScheme(),
        (-3.0, -3.0),
        (3.0, 3.0),
        sign=sign,
    )
    config = MinMaxConfig(
        epochs=3000,
        inner_steps=10,
        batch_size=8000,
        outer_rate=1e-3,
        inner_rate=1e-3,
        width=40,
    )
    if legacy:
        return Preset(name, spec, config, "grid-dpp", legacy_dynamics=True)
    # the closed form uses sign -1 for min-max and +1 for max-min
    reference = lambda x: analytic_example3(horizon, x, -sign)  # noqa: E731
    return Preset(
        name, spec, config, "analytic", reference, description="Symmetric game"
    )


def _ex4(steps: int) -> Preset:
    v1, v2 = 1.0, 0.7
    target, obstacle_center = (3.0, 0.0), (0.5, 1.5)
    obstacle_radius, separation = 0.75, 1.0

    def velocity(x: Operand, a: Operand, b: Operand) -> Operand:
        del x
        return ad.concat([ad.mul(v1, a), ad.mul(v2, b)])

    def terminal(x: Operand) -> Operand:
        return ad.sub(ad.norm2(ad.sub(ad.columns(x, 0, 2), np.asarray(target))), 1.0)

    def obstacle(x: Operand) -> Operand:
        first = ad.columns(x, 0, 2)
        square = ad.sub(
            obstacle_radius, _inf_norm(ad.sub(first, np.asarray(obstacle_center)))
        )
        avoid = ad.sub(separation, ad.norm2(ad.sub(first, ad.columns(x, 2, 4))))
        return ad.maximum(square, avoid)

    spec = GameSpec(
        "ex4",
        Dynamics(4, 2, 2, velocity, (0.0, v1, v2)),
        terminal,
        obstacle,
        4.0,
        steps,
        StepScheme(),
        (-5.0,) * 4,
        (5.0,) * 4,
        OutputActivation.UNIT_BALL,
        OutputActivation.UNIT_BALL,
    )
    config = MinMaxConfig(
        epochs=5000,
        inner_steps=5,
        batch_size=50000,
        outer_rate=1e-3,
        inner_rate=1e-3,
        width=40,
    )
    reversed_config = MinMaxConfig(
        epochs=1000,
        inner_steps=10,
        batch_size=20000,
        outer_rate=2e-3,
        inner_rate=2e-3,
        width=20,
    )
    return Preset(
        "ex4",
        spec,
        config,
        "none",
        slice=(0.0, -2.0),
        reversed_config=reversed_config,
        description="Pursuit-evasion with a square obstacle, 4-D",
    )


# The rotation study runs 10 external rounds; each round is 20 outer iterations.
ROTATION_ROUNDS = 10
ROTATION_EPOCHS_PER_ROUND = 20


def _rotation(steps: int, obstacle: bool) -> Preset:
    c = 0.2
    target = _ball((1.0, 0.0), 0.5)
    g = None
    if obstacle:
        avoid = _ball((0.75, 1.0), 0.75, sign=-1.0)
        g = lambda x: ad.clamp(avoid(x), -0.5, 0.5)  # noqa: E731
    spec = GameSpec(
        "rotation-obstacle" if obstacle else "rotation",
        _rotation_dynamics(c),
        lambda x: ad.clamp(target(x), -0.5, 0.5),
        g,
        1.0,
        steps,
        StepScheme(),
        (-2.0, -2.0),
        (2.0, 2.0),
    )
    config = MinMaxConfig(
        epochs=ROTATION_ROUNDS * ROTATION_EPOCHS_PER_ROUND,
        inner_steps=5,
        batch_size=500,
        outer_rate=5e-3,
        inner_rate=5e-3,
    )
    return Preset(spec.name, spec, config, "grid-dpp", description="Rotation test case")


def _separable(steps: int) -> Preset:
    def velocity(x: Operand, a: Operand, b: Operand) -> Operand:
        del x
        return ad.add(a, ad.mul(0.2, b))

    spec = GameSpec(
        "separable",
        Dynamics(1, 1, 1, velocity, (0.0, 1.0, 0.2)),
        lambda x: ad.sub(ad.absolute(ad.add(x, 1.0)), 0.5),
        lambda x: ad.clamp(ad.neg(ad.absolute(x)), -0.5, 0.5),
        1.5,
        steps,
        StepScheme(),
        (-2.0,),
        (2.0,),
    )
    config = MinMaxConfig(epochs=300, inner_steps=5, batch_size=500)
    return Preset("separable", spec, config, "none", description="Rate check game")


# Rate-check grid: with 21 control points per set every macro displacement
# is a multiple of RATE_SPACING when N divides 64, so endpoints land on nodes.
RATE_CONTROL_POINTS = 21
RATE_SPACING = 1.5 * 0.02 / 64


def rate_box() -> Box:
    """Node-aligned grid for the rate check on the ``separable`` preset."""
    nodes = 17068
    lower = -4.0
    return Box((lower,), (lower + (nodes - 1) * RATE_SPACING,), (nodes,))


_DEFAULT_STEPS = {
    "ex1": 4,
    "ex1-obstacle": 4,
    "ex2": 4,
    "ex3-minmax": 4,
    "ex3-maxmin": 4,
    "ex4": 4,
    "rotation": 4,
    "rotation-obstacle": 4,
    "separable": 4,
}


def preset_names() -> list[str]:
    """Every preset name, sorted."""
    return sorted(_DEFAULT_STEPS)


def preset(
    name: str,
    steps: int | None = None,
    legacy_dynamics: bool = False,
    substeps: int | None = None,
) -> Preset:
    """Build a preset.

    Args:
        name: One of ``preset_names()``.
        steps: Number of time steps N (preset default when omitted).
        legacy_dynamics: Use the older Example 3 dynamics (ex3 presets only).
        substeps: Substeps per macro step (5 when omitted).

    Raises:
        ConfigurationError: On an unknown name or an option the preset lacks.
    """
    if name not in _DEFAULT_STEPS:
        raise ConfigurationError(
            f"Unknown preset {name!r}; expected one of {preset_names()}"
        )
    if legacy_dynamics and not name.startswith("ex3"):
        raise ConfigurationError(f"Preset {name!r} has no legacy dynamics")
    count = _DEFAULT_STEPS[name] if steps is None else steps
    builders: dict[str, Callable[[], Preset]] = {
        "ex1": lambda: _ex1(count, False),
        "ex1-obstacle": lambda: _ex1(count, True),
        "ex2": lambda: _ex2(count),
        "ex3-minmax": lambda: _ex3(count, 1, legacy_dynamics),
        "ex3-maxmin": lambda: _ex3(count, -1, legacy_dynamics),
        "ex4": lambda: _ex4(count),
        "rotation": lambda: _rotation(count, False),
        "rotation-obstacle": lambda: _rotation(count, True),
        "separable": lambda: _separable(count),
    }
    result = builders[name]()
    if substeps is not None:
        result = replace(result, spec=result.spec.with_substeps(substeps))
    return result


@lru_cache(maxsize=16)
def _dpp_reference(
    name: str, steps: int, legacy_dynamics: bool, resolution: int, control_points: int
) -> GridValue:
    chosen = preset(name, steps, legacy_dynamics)
    box = Box.cube(chosen.spec.lower, chosen.spec.upper, resolution).enlarged(
        BOX_ENLARGEMENT
    )
    controls = ControlGrid.for_game(chosen.spec, control_points)
    return grid_dpp_solve(chosen.spec, box, controls)[-1]


@dataclass(frozen=True)
class TableRow:
    """One line of the time-discretization error table."""

    steps: int
    cpu_time: float
    local_l1: float
    order: float | None


def ex2_table(
    steps: list[int],
    config: MinMaxConfig | None = None,
    seed: int = 0,
    resolution: int = DEFAULT_RESOLUTION,
    eta_loc: float = 0.2,
    workers: int = 1,
) -> list[TableRow]:
    """Train the global scheme on ``ex2`` for each N and tabulate e_L1,loc and orders.

    Raises:
        ConfigurationError: If ``steps`` is empty.
    """
    if not steps:
        raise ConfigurationError("The error table needs at least one N")
    errors: list[float] = []
    times: list[float] = []
    for count in steps:
        chosen = preset("ex2", count)
        start = time.process_time()
        strategies, _ = algorithm1_global(
            chosen.spec, config or chosen.config, seed, workers
        )
        times.append(time.process_time() - start)
        box = chosen.evaluation_box(resolution)
        reference = chosen.reference_values(box)
        assert reference is not None
        values = value_estimate(chosen.spec, strategies, box.points())
        errors.append(local_l1_error(values, reference, eta_loc))
        logger.info("ex2 N=%d: e_L1,loc %.3e", count, errors[-1])
    orders: list[float | None] = [None, *convergence_order(errors)]
    return [
        TableRow(n, t, e, o) for n, t, e, o in zip(steps, times, errors, orders)
    ]


def rotation_benchmark(
    algorithm: str,
    optimizer: str = "adam",
    runs: int = 10,
    seed: int = 0,
    threshold: float = ROTATION_SUCCESS_THRESHOLD,
    config: MinMaxConfig | None = None,
    resolution: int = DEFAULT_RESOLUTION,
) -> int:
    """Count the runs whose e_L1,loc against the grid reference is within ``threshold``.

    Run r trains the ``rotation`` preset with seed ``seed + r``.
    """
    if runs == 0:
        return 0
    chosen = preset("rotation")
    base = config or chosen.config
    settings = MinMaxConfig.model_validate(
        {**base.model_dump(), "algorithm": algorithm, "optimizer": optimizer}
    )
    box = chosen.evaluation_box(resolution)
    reference = chosen.reference_values(box)
    assert reference is not None
    successes = 0
    for run in range(runs):
        strategies, _ = algorithm1_global(chosen.spec, settings, seed + run)
        values = value_estimate(chosen.spec, strategies, box.points())
        error = local_l1_error(values, reference)
        successes += int(error <= threshold)
        logger.info(
            "rotation %s/%s run %d: e_L1,loc %.3e", algorithm, optimizer, run, error
        )
    return successes


def rate_check(
    name: str = "separable",
    steps: Sequence[int] = (2, 4, 8, 16),
    reference_steps: int = 64,
    control_points: int = RATE_CONTROL_POINTS,
    resolution: int = DEFAULT_RESOLUTION,
    workers: int = 1,
) -> RateReport:
    """Order of the time-discretization error of the grid value of a preset.

    ``separable`` runs on its node-aligned grid with ``RATE_CONTROL_POINTS``
    controls per set; other presets use the enlarged sampling box.
    """
    chosen = preset(name)
    if name == "separable":
        box, count = rate_box(), RATE_CONTROL_POINTS
    else:
        box = Box.cube(chosen.spec.lower, chosen.spec.upper, resolution).enlarged(
            BOX_ENLARGEMENT
        )
        count = control_points
    controls = ControlGrid.for_game(chosen.spec, count)
    report = o_tau_rate_check(
        chosen.spec, list(steps), box, controls, reference_steps, workers=workers
    )
    logger.info("%s rate check: slope %.3f", name, report.slope)
    return report
