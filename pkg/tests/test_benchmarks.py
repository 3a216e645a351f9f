import numpy as np
import pytest

from saddle.benchmarks import (
    ex2_table,
    preset,
    preset_names,
    rate_check,
    rotation_benchmark,
)
from saddle.config import MinMaxConfig
from saddle.exceptions import ConfigurationError
from saddle.game import StrategyPair, rollout
from saddle.oracle import analytic_example1, analytic_example2


@pytest.mark.parametrize("name", preset_names())
def test_presets_roll_out(name: str, rng: np.random.Generator) -> None:
    """Every preset plays a short game with small networks."""
    chosen = preset(name, steps=2)
    pair = StrategyPair.create(chosen.spec, 1, 4, seed=0)
    played = rollout(chosen.spec, pair, chosen.spec.sample(rng, 8))
    assert played.cost.shape == (8, 1)
    assert np.all(np.isfinite(played.cost))


def test_preset_names() -> None:
    """The catalogue lists every preset."""
    assert preset_names() == [
        "ex1",
        "ex1-obstacle",
        "ex2",
        "ex3-maxmin",
        "ex3-minmax",
        "ex4",
        "rotation",
        "rotation-obstacle",
        "separable",
    ]


def test_unknown_options() -> None:
    """Unknown names and legacy dynamics outside Example 3 are rejected."""
    with pytest.raises(ConfigurationError):
        preset("ex5")
    with pytest.raises(ConfigurationError):
        preset("ex2", legacy_dynamics=True)


def test_example1_terminal_matches_closed_form(rng: np.random.Generator) -> None:
    """phi of Example 1 is its closed-form value at time to go zero."""
    spec = preset("ex1").spec
    points = spec.sample(rng, 50)
    np.testing.assert_allclose(
        np.asarray(spec.terminal(points))[:, 0], analytic_example1(0.0, points)
    )


def test_rotation_field() -> None:
    """a turns the state, b pushes it outwards with speed c."""
    spec = preset("rotation").spec
    velocity = spec.dynamics(np.array([[1.0, 0.0]]), np.ones((1, 1)), np.ones((1, 1)))
    np.testing.assert_allclose(velocity, [[0.2, 1.0]])


def test_example2_field() -> None:
    """a=b=1 moves at (-2, 2); a alone picks the direction of x1."""
    spec = preset("ex2").spec
    ones = np.ones((1, 1))
    velocity = spec.dynamics(np.zeros((1, 2)), ones, ones)
    np.testing.assert_allclose(velocity, [[-2.0, 2.0]])
    for b in (-1.0, 0.0, 1.0):
        adverse = np.full((1, 1), b)
        forward = spec.dynamics(np.zeros((1, 2)), -ones, adverse)
        backward = spec.dynamics(np.zeros((1, 2)), ones, adverse)
        assert forward[0, 0] == pytest.approx(2.0)
        assert backward[0, 0] == pytest.approx(-2.0)


def test_example4_costs() -> None:
    """Spot values of the pursuit-evasion field, target and obstacle."""
    spec = preset("ex4").spec
    velocity = spec.dynamics(
        np.zeros((1, 4)), np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
    )
    np.testing.assert_allclose(velocity, [[1.0, 0.0, 0.0, 0.7]])
    at_target = np.array([[3.0, 0.0, -4.0, -4.0]])
    assert np.asarray(spec.terminal(at_target))[0, 0] == pytest.approx(-1.0)
    collision = np.array([[0.5, 1.5, 0.5, 1.5]])
    assert np.asarray(spec.obstacle(collision))[0, 0] == pytest.approx(1.0)


def test_sliced_evaluation_box() -> None:
    """The 4-D preset is evaluated on a slice over its first two axes."""
    chosen = preset("ex4")
    assert chosen.slice == (0.0, -2.0)
    box = chosen.evaluation_box(11)
    assert box.dim == 2
    assert chosen.reference_values(box) is None
    assert chosen.reversed_config is not None


def test_analytic_reference() -> None:
    """Analytic presets evaluate their closed form at the grid nodes."""
    chosen = preset("ex2")
    box = chosen.evaluation_box(7)
    np.testing.assert_allclose(
        chosen.reference_values(box), analytic_example2(0.4, box.points())
    )


def test_options_reach_the_game_spec() -> None:
    """Substeps, steps and legacy dynamics are applied to the built game."""
    chosen = preset("ex3-maxmin", steps=3, legacy_dynamics=True, substeps=2)
    assert chosen.spec.steps == 3
    assert chosen.spec.scheme.substeps == 2
    assert chosen.spec.sign == -1
    assert chosen.reference_kind == "grid-dpp"
    assert preset("ex3-minmax").reference_kind == "analytic"


def test_empty_table_is_rejected() -> None:
    """The error table needs at least one N."""
    with pytest.raises(ConfigurationError):
        ex2_table([])


def test_zero_rotation_runs() -> None:
    """No runs, no successes."""
    assert rotation_benchmark("pote", runs=0) == 0


def test_small_error_table() -> None:
    """Rows carry N, a CPU time, the error and the order from the second row on."""
    config = MinMaxConfig(
        epochs=2, inner_steps=1, batch_size=16, hidden_layers=1, width=4
    )
    rows = ex2_table([1, 2], config=config, resolution=9)
    assert [row.steps for row in rows] == [1, 2]
    assert rows[0].order is None
    assert rows[1].order is not None
    assert all(row.local_l1 > 0 and row.cpu_time >= 0 for row in rows)


@pytest.mark.slow
def test_separable_rate() -> None:
    """The grid value error shrinks with the time step."""
    report = rate_check("separable", steps=(2, 4), reference_steps=16)
    assert report.steps == (2, 4)
    assert report.slope > 0


@pytest.mark.slow
def test_trained_example2_error() -> None:
    """Global training on Example 2 with N = 4 lands near the closed form."""
    (row,) = ex2_table([4])
    assert row.local_l1 <= 0.06


@pytest.mark.slow
def test_rotation_ranking() -> None:
    """POTE with Adam succeeds most often, then SGDA, then gamma-GDA."""
    pote = rotation_benchmark("pote")
    sgda = rotation_benchmark("sgda")
    gamma = rotation_benchmark("gamma-gda")
    assert pote >= 8
    assert pote >= sgda >= gamma


def test_separable_game_layout() -> None:
    """The rate-check game moves at a + 0.2 b and carries its obstacle."""
    spec = preset("separable").spec
    ones = np.ones((1, 1))
    assert spec.dynamics(np.zeros((1, 1)), ones, ones)[0, 0] == pytest.approx(1.2)
    assert spec.obstacle is not None
    assert np.asarray(spec.obstacle(np.zeros((1, 1))))[0, 0] == pytest.approx(0.0)
    assert np.asarray(spec.terminal(-ones))[0, 0] == pytest.approx(-0.5)


def test_rotation_budget() -> None:
    """The rotation preset trains 10 rounds of 20 outer iterations."""
    assert preset("rotation").config.epochs == 10 * 20
