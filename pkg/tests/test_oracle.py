from dataclasses import replace

import numpy as np
import pytest

from saddle import autodiff as ad
from saddle.benchmarks import preset
from saddle.const import BOX_ENLARGEMENT
from saddle.exceptions import ConfigurationError, InstanceTooLargeError, MetricError
from saddle.game import GameSpec
from saddle.metrics import Box, local_l1_error
from saddle.oracle import (
    ControlGrid,
    FiniteInstance,
    GridValue,
    analytic_example1,
    analytic_example2,
    analytic_example3,
    grid_dpp_solve,
    o_tau_rate_check,
    terminal_values,
    theorem1_enumerate,
)


def _box_target(points: np.ndarray) -> np.ndarray:
    return np.clip(np.abs(points).max(axis=1) - 1.0, -0.5, 0.5)


def test_grid_value_is_exact_on_linear_functions(rng: np.random.Generator) -> None:
    """Multilinear interpolation reproduces an affine function."""
    box = Box.cube((0.0, 0.0), (1.0, 2.0), 5)
    grid = GridValue.from_function(box, lambda p: 1.0 + p[:, 0] + 2.0 * p[:, 1])
    queries = rng.uniform((0.0, 0.0), (1.0, 2.0), size=(20, 2))
    expected = 1.0 + queries[:, 0] + 2.0 * queries[:, 1]
    np.testing.assert_allclose(grid(queries), expected)


def test_grid_value_clamps_outside_the_box() -> None:
    """Queries outside the box take the value at its boundary."""
    box = Box.cube((0.0, 0.0), (1.0, 2.0), 5)
    grid = GridValue.from_function(box, lambda p: p[:, 0] + 2.0 * p[:, 1])
    outside = np.array([[2.0, 1.0], [-1.0, 5.0]])
    np.testing.assert_allclose(grid(outside), [3.0, 4.0])
    assert grid.outside(outside) == 2


def test_grid_value_checks_its_size() -> None:
    """The value array must fill the grid."""
    with pytest.raises(ConfigurationError):
        GridValue(Box.cube((0.0,), (1.0,), 5), np.zeros(4))


def test_control_grids() -> None:
    """Interval grids are products; ball grids stay in the closed unit ball."""
    square = ControlGrid.points("tanh", 2, 3)
    assert square.shape == (9, 2)
    assert square.min() == -1.0 and square.max() == 1.0
    ball = ControlGrid.points("unit-ball", 2, 5)
    assert ball.shape == (1 + 4 * 5, 2)
    assert np.linalg.norm(ball, axis=1).max() == pytest.approx(1.0)
    with pytest.raises(ConfigurationError):
        ControlGrid.points("identity", 1, 3)
    with pytest.raises(ConfigurationError):
        ControlGrid.points("tanh", 1, 0)


def test_example1_closed_form() -> None:
    """Spot values of the rotation game at time to go zero."""
    points = np.array([[3.5, 0.0], [2.0, 0.0], [0.0, 0.0]])
    values = analytic_example1(0.0, points)
    assert values[0] == pytest.approx(0.375)
    assert values[1] == pytest.approx(-0.5)
    assert values[2] == pytest.approx(0.5)
    assert analytic_example1(0.0, np.array([3.5, 0.0])) == pytest.approx(0.375)


def test_examples_2_and_3_start_from_the_target(rng: np.random.Generator) -> None:
    """At time to go zero the closed forms equal the terminal cost."""
    points = rng.uniform(-3.0, 3.0, size=(200, 2))
    target = _box_target(points)
    np.testing.assert_allclose(analytic_example2(0.0, points), target)
    np.testing.assert_allclose(analytic_example3(0.0, points, 1), target)
    np.testing.assert_allclose(analytic_example3(0.0, points, -1), target)


def test_example3_orders_its_values(rng: np.random.Generator) -> None:
    """The max-min closed form dominates the min-max one."""
    points = rng.uniform(-3.0, 3.0, size=(200, 2))
    minmax = analytic_example3(0.4, points, -1)
    maxmin = analytic_example3(0.4, points, 1)
    assert np.all(maxmin >= minmax - 1e-12)


def test_closed_forms_reject_bad_arguments() -> None:
    """Negative times and bad signs are configuration errors."""
    with pytest.raises(ConfigurationError):
        analytic_example2(-0.1, np.zeros((1, 2)))
    with pytest.raises(ConfigurationError):
        analytic_example3(0.1, np.zeros((1, 2)), 0)


def test_grid_dpp_on_a_line(line_game: GameSpec) -> None:
    """Each step moves the value by min_a + max_b of the velocity."""
    box = Box.cube((-1.0,), (1.0,), 11)
    levels = grid_dpp_solve(line_game, box, ControlGrid.for_game(line_game, 3))
    assert len(levels) == line_game.steps + 1
    terminal = terminal_values(line_game, box.points())
    np.testing.assert_allclose(levels[0].values, terminal)
    # two steps of length 0.5 at speed -1 + 0.2
    np.testing.assert_allclose(levels[-1](np.array([[1.0], [0.6]])), [0.2, -0.2])
    assert levels[-1](np.array([[-1.0]]))[0] == pytest.approx(-1.0)


def test_grid_dpp_with_zero_steps(line_game: GameSpec) -> None:
    """Zero steps give the terminal grid alone."""
    box = Box.cube((-1.0,), (1.0,), 5)
    levels = grid_dpp_solve(line_game, box, ControlGrid.for_game(line_game, 3), steps=0)
    assert len(levels) == 1


def test_matching_pennies_instance() -> None:
    """Seeing b lets alpha dodge; ignoring it costs the full penalty."""
    instance = FiniteInstance(
        transition=np.zeros((1, 2, 2), dtype=np.int64),
        running=np.array([[[1.0, -1.0], [-1.0, 1.0]]]),
        terminal=np.array([-1.0]),
        steps=1,
    )
    result = theorem1_enumerate(instance)
    assert result.strategies == result.alternating == result.feedback == -1.0
    assert result.open_loop == 1.0
    assert result.max_gap == 0.0


def test_value_definitions_agree_on_random_instances() -> None:
    """Strategy, alternating and feedback values coincide."""
    rng = np.random.default_rng(99)
    for _ in range(20):
        instance = FiniteInstance.random(rng, max_strategies=20_000)
        result = theorem1_enumerate(instance)
        assert result.max_gap <= 1e-12
        assert result.open_loop >= result.strategies - 1e-12


@pytest.mark.slow
def test_value_definitions_agree_on_many_instances() -> None:
    """Same agreement over a larger random sample."""
    rng = np.random.default_rng(2024)
    for _ in range(200):
        result = theorem1_enumerate(FiniteInstance.random(rng))
        assert result.max_gap <= 1e-12


def test_enumeration_refuses_huge_instances() -> None:
    """Four controls each over three steps exceed the enumeration limit."""
    instance = FiniteInstance(
        transition=np.zeros((1, 4, 4), dtype=np.int64),
        running=np.zeros((1, 4, 4)),
        terminal=np.zeros(1),
        steps=3,
    )
    with pytest.raises(InstanceTooLargeError):
        theorem1_enumerate(instance)


def test_finite_instance_validation() -> None:
    """Shapes must agree and N must be positive."""
    transition = np.zeros((1, 2, 2), dtype=np.int64)
    with pytest.raises(ConfigurationError):
        FiniteInstance(transition, np.zeros((1, 2)), np.zeros(1), 1)
    with pytest.raises(ConfigurationError):
        FiniteInstance(transition, np.zeros((1, 2, 2)), np.zeros(1), 0)


def test_rate_check_needs_two_step_counts(line_game: GameSpec) -> None:
    """A slope needs at least two points."""
    with pytest.raises(MetricError):
        o_tau_rate_check(
            line_game,
            [4],
            Box.cube((-1.0,), (1.0,), 5),
            ControlGrid.for_game(line_game, 3),
        )


@pytest.mark.slow
def test_grid_dpp_matches_example2() -> None:
    """The grid value of Example 2 is close to its closed form near the front."""
    spec = preset("ex2", steps=16).spec
    box = Box.cube(spec.lower, spec.upper, 201).enlarged(BOX_ENLARGEMENT)
    value = grid_dpp_solve(spec, box, ControlGrid.for_game(spec, 41))[-1]
    nodes = Box.cube(spec.lower, spec.upper, 101).points()
    error = local_l1_error(value(nodes), analytic_example2(spec.horizon, nodes))
    assert error <= 0.05


def test_grid_dpp_is_monotone_in_the_terminal_cost(line_game: GameSpec) -> None:
    """Raising phi never lowers the grid value."""
    raised = replace(line_game, terminal=lambda x: ad.add(x, ad.absolute(x)))
    box = Box.cube((-1.0,), (1.0,), 21)
    controls = ControlGrid.for_game(line_game, 5)
    nodes = box.points()
    low = grid_dpp_solve(line_game, box, controls)[-1](nodes)
    high = grid_dpp_solve(raised, box, controls)[-1](nodes)
    assert np.all(high >= low - 1e-12)
    assert np.any(high > low)


def test_grid_dpp_lower_value_stays_below_upper_value() -> None:
    """On shared grids the Example 3 min-max value never exceeds the max-min one."""
    lower_game = preset("ex3-minmax", steps=4).spec
    upper_game = preset("ex3-maxmin", steps=4).spec
    box = Box.cube(lower_game.lower, lower_game.upper, 41).enlarged(BOX_ENLARGEMENT)
    controls = ControlGrid.for_game(lower_game, 11)
    nodes = box.points()
    lower = grid_dpp_solve(lower_game, box, controls)[-1](nodes)
    upper = grid_dpp_solve(upper_game, box, controls)[-1](nodes)
    assert np.all(lower <= upper + 1e-12)


@pytest.mark.slow
def test_grid_dpp_matches_example1_near_the_front() -> None:
    """The Example 1 closed form agrees with the grid value in the band."""
    spec = preset("ex1", steps=16).spec
    box = Box.cube(spec.lower, spec.upper, 101).enlarged(BOX_ENLARGEMENT)
    value = grid_dpp_solve(spec, box, ControlGrid.for_game(spec, 41))[-1]
    nodes = Box.cube(spec.lower, spec.upper, 101).points()
    error = local_l1_error(value(nodes), analytic_example1(spec.horizon, nodes))
    assert error <= 0.05
