"""Oracle module. Reference values from grids, closed forms and enumeration."""

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property, partial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import autodiff as ad
from .autodiff import Array, Operand
from .const import DEFAULT_CONTROL_POINTS, MAX_ENUMERATED_STRATEGIES
from .dynamics import step_with_max
from .exceptions import ConfigurationError, InstanceTooLargeError, MetricError
from .game import GameSpec
from .metrics import Box, fitted_slope, write_grid_csv
from .nn import OutputActivation

logger = logging.getLogger(__name__)

# Example 1 closed form: target radius, its center on the first axis, time offset
EX1_CENTER = 2.0
EX1_RADIUS = 1.2
EX1_TIME_OFFSET = 0.25
EX1_CLAMP = (-0.5, 0.5)

# Example 2/3 closed forms
EX2_CLAMP = (-0.5, 0.5)

_ENUMERATION_CHUNK = 65_536


@dataclass(frozen=True)
class GridValue:
    """A value function tabulated on the nodes of a box.

    Queries outside the box are clamped to its boundary before the
    multilinear interpolation.
    """

    box: Box
    values: Array

    def __post_init__(self) -> None:
        if np.size(self.values) != self.box.size:
            raise ConfigurationError(
                f"{np.size(self.values)} values do not fill "
                f"a {self.box.resolution} grid"
            )

    @classmethod
    def from_function(cls, box: Box, function: Callable[[Array], Array]) -> "GridValue":
        """Tabulate ``function`` at the nodes of ``box``."""
        values = np.asarray(function(box.points()), dtype=np.float64).reshape(-1)
        return cls(box, values)

    @cached_property
    def _interpolator(self) -> RegularGridInterpolator:
        grid = np.asarray(self.values, dtype=np.float64).reshape(self.box.resolution)
        return RegularGridInterpolator(self.box.axes(), grid, method="linear")

    def clamp(self, points: Array) -> Array:
        """Project points onto the box."""
        return np.clip(points, self.box.lower, self.box.upper)

    def outside(self, points: Array) -> int:
        """Number of points lying outside the box."""
        inside = (points >= self.box.lower) & (points <= self.box.upper)
        return int(np.count_nonzero(~inside.all(axis=-1)))

    def __call__(self, points: Array) -> Array:
        """Interpolated values at (rows, d) points, shape (rows,)."""
        query = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return self._interpolator(self.clamp(query))

    def to_csv(self, path: Path | str, title: str = "") -> None:
        """Write the grid with its box metadata."""
        write_grid_csv(path, self.box, self.values, title)


def _interval_points(dim: int, count: int) -> Array:
    axis = np.linspace(-1.0, 1.0, count) if count > 1 else np.zeros(1)
    mesh = np.meshgrid(*([axis] * dim), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _ball_points(dim: int, count: int) -> Array:
    if dim != 2:
        raise ConfigurationError(f"Polar ball grids are two-dimensional, got dim {dim}")
    radii = np.linspace(0.0, 1.0, max(count, 2))[1:]
    angles = np.linspace(0.0, 2 * np.pi, max(count, 2), endpoint=False)
    ring = np.stack(
        [
            np.outer(radii, np.cos(angles)).ravel(),
            np.outer(radii, np.sin(angles)).ravel(),
        ],
        axis=-1,
    )
    return np.concatenate([np.zeros((1, 2)), ring])


@dataclass(frozen=True)
class ControlGrid:
    """Finite grids of the control sets A and B."""

    a_points: Array
    b_points: Array

    def __post_init__(self) -> None:
        if len(self.a_points) == 0 or len(self.b_points) == 0:
            raise ConfigurationError("Control grids must be non-empty")

    @staticmethod
    def points(activation: OutputActivation | str, dim: int, count: int) -> Array:
        """Grid of the closure of the range of an output activation.

        ``tanh`` gives the product of ``count`` points over [-1, 1] per axis,
        endpoints included. ``unit-ball`` gives the center plus ``count - 1``
        radii times ``count`` angles.
        """
        if count < 1:
            raise ConfigurationError(f"Need at least one control point, got {count}")
        kind = OutputActivation(activation)
        if kind == OutputActivation.TANH:
            return _interval_points(dim, count)
        if kind == OutputActivation.UNIT_BALL:
            return _ball_points(dim, count)
        raise ConfigurationError("Identity outputs have no compact control set to grid")

    @classmethod
    def for_game(
        cls, spec: GameSpec, count: int = DEFAULT_CONTROL_POINTS
    ) -> "ControlGrid":
        """Grids matching the output activations of ``spec``."""
        return cls(
            cls.points(spec.activation_a, spec.dynamics.control_dim_a, count),
            cls.points(spec.activation_b, spec.dynamics.control_dim_b, count),
        )

    def __repr__(self) -> str:
        return f"<ControlGrid: |A|={len(self.a_points)}, |B|={len(self.b_points)}>"


def _one_step_value(
    spec: GameSpec, nodes: Array, following: GridValue, controls: ControlGrid, b: Array
) -> tuple[Array, int]:
    rows = len(nodes)
    b_rows = np.broadcast_to(b, (rows, len(b)))
    inner = np.minimum if spec.sign > 0 else np.maximum
    worst = np.full(rows, np.inf if spec.sign > 0 else -np.inf)
    clamped = 0
    for a in controls.a_points:
        a_rows = np.broadcast_to(a, (rows, len(a)))
        end, step_max = step_with_max(
            spec.dynamics, nodes, a_rows, b_rows, spec.dt, spec.scheme, spec.obstacle
        )
        end = np.asarray(end)
        clamped += following.outside(end)
        candidate = following(end)
        if step_max is not None:
            candidate = np.maximum(np.asarray(step_max)[:, 0], candidate)
        worst = inner(worst, candidate)
    return worst, clamped


def terminal_values(spec: GameSpec, points: Array) -> Array:
    """phi v g at ``points``, shape (rows,)."""
    values = np.asarray(spec.terminal(points))[:, 0]
    if spec.obstacle is not None:
        values = np.maximum(values, np.asarray(spec.obstacle(points))[:, 0])
    return values


def grid_dpp_solve(
    spec: GameSpec,
    box: Box,
    controls: ControlGrid,
    steps: int | None = None,
    workers: int = 1,
) -> list[GridValue]:
    """Backward value iteration V_k = max_b min_a (G v V_{k+1}(F)) on a grid.

    Uses the game's own substep scheme, so G carries the obstacle along the
    substeps. States leaving the box are clamped to its boundary. Games with
    sign -1 use min_b max_a instead.

    Args:
        spec: Game to solve.
        box: Grid of the tabulated values.
        controls: Finite control sets.
        steps: Number of time steps (``spec.steps`` when omitted; 0 allowed).
        workers: Threads sharing the b loop of each level.

    Returns:
        The grids V_N, ..., V_0.
    """
    count = spec.steps if steps is None else steps
    if count < 0:
        raise ConfigurationError(f"Number of steps must be >= 0, got {count}")
    game = spec if steps is None or steps == 0 else spec.with_steps(steps)
    nodes = box.points()
    levels = [GridValue(box, terminal_values(spec, nodes))]
    total_clamped = 0
    logger.info(
        "Grid DPP on %r: %d nodes, %r, %d steps", spec, box.size, controls, count
    )
    for k in reversed(range(count)):
        following = levels[-1]
        solve = partial(_one_step_value, game, nodes, following, controls)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(solve, controls.b_points))
        else:
            results = [solve(b) for b in controls.b_points]
        outer = np.maximum if spec.sign > 0 else np.minimum
        best = np.full(len(nodes), -np.inf if spec.sign > 0 else np.inf)
        clamped = 0
        for worst, outside in results:
            best = outer(best, worst)
            clamped += outside
        total_clamped += clamped
        levels.append(GridValue(box, best))
        logger.debug("Level %d done, %d clamped queries", k, clamped)
    if total_clamped:
        logger.warning(
            "%d interpolation queries left the grid (%s) and were clamped",
            total_clamped,
            box.header(),
        )
    return levels


def _as_points(x: Array) -> tuple[Array, bool]:
    points = np.asarray(x, dtype=np.float64)
    return np.atleast_2d(points), points.ndim == 1


def _check_time(s: float) -> None:
    if s < 0:
        raise ConfigurationError(f"Time to go must be non-negative, got {s}")


def example1_value(x: Operand, t: float, c: float) -> Operand:
    """Example 1 level-set function at total time ``t``, row-wise and tape-traceable.

    The angular window of the target opens by ``t`` and its radial
    thickness grows at rate ``c``; the result is clamped to [-0.5, 0.5].
    """
    x1, x2 = ad.column(x, 0), ad.column(x, 1)
    theta = ad.arctan2(x2, x1)
    theta_p = ad.clamp(theta, -t, t)
    radial = ad.add(ad.mul(ad.cos(theta_p), x1), ad.mul(ad.sin(theta_p), x2))
    inner = ad.maximum(
        ad.add(ad.absolute(ad.sub(radial, EX1_CENTER)), c * t),
        ad.mul(2 * np.pi, ad.absolute(ad.sub(theta, theta_p))),
    )
    return ad.clamp(ad.sub(inner, EX1_RADIUS), *EX1_CLAMP)


def analytic_example1(s: float, x: Array, c: float = 0.3) -> Array:
    """Closed-form value of the Example 1 game at time to go ``s``."""
    _check_time(s)
    points, single = _as_points(x)
    value = np.asarray(example1_value(points, s + EX1_TIME_OFFSET, c))[:, 0]
    return value[0] if single else value


def _example23_terms(s: float, points: Array) -> tuple[Array, ...]:
    x, y = points[:, 0], points[:, 1]
    x1 = 1 - 2 * s
    z3 = 0.5
    # p times the 2x2 determinants; the common factor 3s cancels
    r2 = np.maximum(-1 - y, y - 1)
    r3 = z3 * (4 * (y - 1) + 2 * (x - x1)) / 3
    r3_bar = z3 * (4 * (y - 1) + 2 * (-x - x1)) / 3
    r4 = z3 * (4 * (-y - 1) + 2 * (-x - x1)) / 3
    return x, r2, r3, r3_bar, r4


def analytic_example2(s: float, x: Array) -> Array:
    """Closed-form value of the Example 2 game at time to go ``s`` (s = 0 gives phi)."""
    _check_time(s)
    points, single = _as_points(x)
    px, r2, r3, _, r4 = _example23_terms(s, points)
    r1 = np.maximum(-1 - 2 * s - px, px - (1 + 2 * s))
    value = np.clip(np.maximum.reduce([r1, r2, r3, r4]), *EX2_CLAMP)
    return value[0] if single else value


def analytic_example3(s: float, x: Array, sign: int) -> Array:
    """Closed-form Example 3 value: sign -1 for min-max, +1 for max-min."""
    _check_time(s)
    if sign not in (1, -1):
        raise ConfigurationError(f"sign must be +1 or -1, got {sign}")
    points, single = _as_points(x)
    px, r2, _, r3_bar, r4 = _example23_terms(s, points)
    if sign < 0:
        r1 = np.maximum(-1 - 2 * s - px, px - 1)
    else:
        r1 = np.maximum(-1 - px, px - (1 - 2 * s))
    value = np.clip(np.maximum.reduce([r1, r2, r3_bar, r4]), *EX2_CLAMP)
    return value[0] if single else value


@dataclass(frozen=True)
class FiniteInstance:
    """A game with finitely many states and controls.

    Attributes:
        transition: Next state index, shape (states, |A|, |B|).
        running: Running cost G(x, a, b), same shape.
        terminal: Terminal cost per state.
        steps: Number of time steps N.
        start: Initial state index.
    """

    transition: Array
    running: Array
    terminal: Array
    steps: int
    start: int = 0

    def __post_init__(self) -> None:
        if self.transition.shape != self.running.shape or self.transition.ndim != 3:
            raise ConfigurationError(
                "transition and running must share a (S, A, B) shape"
            )
        if len(self.terminal) != self.transition.shape[0]:
            raise ConfigurationError("terminal needs one cost per state")
        if self.steps < 1:
            raise ConfigurationError(f"Need N >= 1, got {self.steps}")

    @classmethod
    def random(
        cls,
        rng: np.random.Generator,
        max_steps: int = 3,
        max_controls: int = 4,
        max_states: int = 3,
        max_strategies: int = 100_000,
    ) -> "FiniteInstance":
        """Random instance with costs in [-1, 1] whose enumerations stay small."""
        while True:
            states = int(rng.integers(1, max_states + 1))
            n_a = int(rng.integers(1, max_controls + 1))
            n_b = int(rng.integers(1, max_controls + 1))
            steps = int(rng.integers(1, max_steps + 1))
            instance = cls(
                rng.integers(0, states, size=(states, n_a, n_b)),
                rng.uniform(-1.0, 1.0, size=(states, n_a, n_b)),
                rng.uniform(-1.0, 1.0, size=states),
                steps,
            )
            if max(instance.strategy_count(), instance.table_count()) <= max_strategies:
                return instance

    @property
    def controls(self) -> tuple[int, int]:
        """(|A|, |B|)."""
        return int(self.transition.shape[1]), int(self.transition.shape[2])

    def reachable(self) -> list[Array]:
        """Sorted reachable state indices at steps 0..N-1."""
        current = np.array([self.start])
        levels = [current]
        for _ in range(self.steps - 1):
            current = np.unique(self.transition[current].ravel())
            levels.append(current)
        return levels

    @property
    def history_nodes(self) -> int:
        """Number of non-empty b histories of length at most N."""
        n_b = self.controls[1]
        return sum(n_b**k for k in range(1, self.steps + 1))

    @property
    def table_entries(self) -> int:
        """Number of (step, reachable state, b) table cells."""
        return sum(len(level) for level in self.reachable()) * self.controls[1]

    def strategy_count(self) -> int:
        """Number of non-anticipative strategies (decision trees over b histories)."""
        return self.controls[0] ** self.history_nodes

    def table_count(self) -> int:
        """Number of time-dependent feedback tables on reachable states x B."""
        return self.controls[0] ** self.table_entries


@dataclass(frozen=True)
class EnumerationResult:
    """The three value definitions of a finite instance, plus open-loop min-max."""

    strategies: float
    alternating: float
    feedback: float
    open_loop: float

    @property
    def max_gap(self) -> float:
        """Largest pairwise difference of the three values."""
        values = (self.strategies, self.alternating, self.feedback)
        return max(values) - min(values)


def _b_sequences(n_b: int, steps: int) -> list[tuple[int, ...]]:
    return list(itertools.product(range(n_b), repeat=steps))


def _enumerate_min(
    count: int, digits: int, radix: int, worst_case: Callable[[Array], Array]
) -> float:
    if count > MAX_ENUMERATED_STRATEGIES:
        raise InstanceTooLargeError(
            f"{count} strategies exceed the enumeration limit "
            f"{MAX_ENUMERATED_STRATEGIES}"
        )
    powers = radix ** np.arange(digits, dtype=np.int64)
    best = np.inf
    for start in range(0, count, _ENUMERATION_CHUNK):
        index = np.arange(start, min(count, start + _ENUMERATION_CHUNK), dtype=np.int64)
        table = (index[:, None] // powers) % radix
        best = min(best, float(worst_case(table).min()))
    return best


def _play(
    instance: FiniteInstance,
    rows: int,
    choose: Callable[[int, Array, int, tuple[int, ...]], Array],
) -> Array:
    worst = np.full(rows, -np.inf)
    n_b = instance.controls[1]
    for sequence in _b_sequences(n_b, instance.steps):
        state = np.full(rows, instance.start)
        cost = np.full(rows, -np.inf)
        for k, b in enumerate(sequence):
            a = choose(k, state, b, sequence)
            cost = np.maximum(cost, instance.running[state, a, b])
            state = instance.transition[state, a, b]
        worst = np.maximum(worst, np.maximum(cost, instance.terminal[state]))
    return worst


def _strategy_value(instance: FiniteInstance) -> float:
    n_a, n_b = instance.controls
    offsets = [sum(n_b**m for m in range(1, k + 1)) for k in range(instance.steps)]

    def worst_case(table: Array) -> Array:
        rows = np.arange(len(table))

        def choose(k: int, state: Array, b: int, sequence: tuple[int, ...]) -> Array:
            prefix = enumerate(sequence[: k + 1])
            node = offsets[k] + sum(v * n_b ** (k - j) for j, v in prefix)
            return table[rows, node]

        return _play(instance, len(table), choose)

    return _enumerate_min(
        instance.strategy_count(), instance.history_nodes, n_a, worst_case
    )


def _feedback_value(instance: FiniteInstance) -> float:
    n_a, n_b = instance.controls
    levels = instance.reachable()
    states = instance.transition.shape[0]
    positions = []
    offsets = []
    offset = 0
    for level in levels:
        position = np.full(states, -1, dtype=np.int64)
        position[level] = np.arange(len(level))
        positions.append(position)
        offsets.append(offset)
        offset += len(level) * n_b

    def worst_case(table: Array) -> Array:
        rows = np.arange(len(table))

        def choose(k: int, state: Array, b: int, _: tuple[int, ...]) -> Array:
            return table[rows, offsets[k] + positions[k][state] * n_b + b]

        return _play(instance, len(table), choose)

    return _enumerate_min(instance.table_count(), offset, n_a, worst_case)


def _alternating_value(instance: FiniteInstance) -> float:
    value = instance.terminal.copy()
    for _ in range(instance.steps):
        stage = np.maximum(instance.running, value[instance.transition])
        value = stage.min(axis=1).max(axis=1)
    return float(value[instance.start])


def _open_loop_value(instance: FiniteInstance) -> float:
    best = np.inf
    n_a = instance.controls[0]
    for controls in itertools.product(range(n_a), repeat=instance.steps):
        chosen = np.asarray(controls)

        def choose(k: int, state: Array, b: int, sequence: tuple[int, ...]) -> Array:
            del state, b, sequence
            return chosen[k : k + 1]

        best = min(best, float(_play(instance, 1, choose)[0]))
    return best


def theorem1_enumerate(instance: FiniteInstance) -> EnumerationResult:
    """Values of a finite game by exhaustive enumeration.

    ``strategies`` minimizes over every non-anticipative strategy (a decision
    tree over b histories), ``alternating`` is the backward max-min
    recursion, ``feedback`` minimizes over tables a = alpha_k(x, b) on the
    reachable states. All three maximize over b sequences. ``open_loop``
    minimizes over control sequences that ignore b.

    Raises:
        InstanceTooLargeError: If an enumeration exceeds the size limit.
    """
    result = EnumerationResult(
        _strategy_value(instance),
        _alternating_value(instance),
        _feedback_value(instance),
        _open_loop_value(instance),
    )
    logger.debug("Enumeration: %r", result)
    return result


@dataclass(frozen=True)
class RateReport:
    """Errors of the grid value against a fine-step reference."""

    steps: tuple[int, ...]
    errors: tuple[float, ...]
    slope: float


def o_tau_rate_check(
    spec: GameSpec,
    steps: Sequence[int],
    box: Box,
    controls: ControlGrid,
    reference_steps: int = 64,
    region: Box | None = None,
    workers: int = 1,
) -> RateReport:
    """Fit the order of the time-discretization error of the grid value.

    Each V_0 on N steps is compared with V_0 on ``reference_steps`` steps by
    the largest node difference inside ``region`` (the sampling box when
    omitted).

    Raises:
        MetricError: If fewer than two step counts are given.
    """
    if len(steps) < 2:
        raise MetricError(f"A rate needs at least two step counts, got {list(steps)}")
    reference = grid_dpp_solve(spec, box, controls, reference_steps, workers)[-1]
    area = region or Box(spec.lower, spec.upper, box.resolution)
    nodes = box.points()
    inside = np.all((nodes >= area.lower) & (nodes <= area.upper), axis=-1)
    errors = []
    for count in steps:
        value = grid_dpp_solve(spec, box, controls, count, workers)[-1]
        error = float(np.max(np.abs(value.values[inside] - reference.values[inside])))
        logger.info("N=%d: max error %.3e", count, error)
        errors.append(error)
    slope = fitted_slope([spec.horizon / n for n in steps], errors)
    return RateReport(tuple(steps), tuple(errors), slope)
