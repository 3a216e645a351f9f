from pathlib import Path
from typing import Sequence

import numpy as np
import pytest

from saddle import autodiff as ad
from saddle.autodiff import Operand, Tape
from saddle.config import MinMaxConfig
from saddle.exceptions import ConfigurationError, OptimizerError, TrainingError
from saddle.minimax import (
    AdamUpdater,
    FunctionOracle,
    MinMaxSolver,
    OptState,
    adam_update,
    agda_step,
    gamma_gda_step,
    pote_outer,
    poteb_step,
    sgda_step,
    unrolled_objective,
)


def _quadratic(x: Sequence[Operand], y: Sequence[Operand], _: object) -> Operand:
    """x^2/2 + xy - y^2/2, saddle at the origin."""
    (u,), (v,) = x, y
    value = ad.add(
        ad.sub(ad.mul(0.5, ad.mul(u, u)), ad.mul(0.5, ad.mul(v, v))), ad.mul(u, v)
    )
    return ad.reduce_sum(value)


def _noisy_bilinear(
    x: Sequence[Operand], y: Sequence[Operand], sample: np.ndarray
) -> Operand:
    """Sample-weighted coupling with a tanh so the unrolled ascent is nonlinear."""
    (u,), (v,) = x, y
    coupling = ad.mul(ad.tanh(ad.mul(u, v)), sample)
    return ad.reduce_sum(ad.sub(coupling, ad.mul(0.5, ad.mul(v, v))))


def _start() -> tuple[list[np.ndarray], list[np.ndarray]]:
    return [np.array([1.0])], [np.array([-0.5])]


def _distance(x: Sequence[np.ndarray], y: Sequence[np.ndarray]) -> float:
    return float(np.hypot(x[0][0], y[0][0]))


def _bilinear(x: Sequence[Operand], y: Sequence[Operand], _: object) -> Operand:
    (u,), (v,) = x, y
    return ad.reduce_sum(ad.mul(u, v))


def test_single_steps_on_a_bilinear_game() -> None:
    """One step of each rule from (1, 1) on Q = xy, evaluated by hand."""
    oracle = FunctionOracle(_bilinear)
    rng = np.random.default_rng(0)
    x, y = [np.array([1.0])], [np.array([1.0])]
    simultaneous = sgda_step(x, y, oracle, 0.1, rng)
    assert (simultaneous.x[0][0], simultaneous.y[0][0]) == pytest.approx((0.9, 1.1))
    alternating = agda_step(x, y, oracle, 0.1, 0.1, rng)
    assert (alternating.x[0][0], alternating.y[0][0]) == pytest.approx((0.9, 1.09))
    slowed = gamma_gda_step(x, y, oracle, 0.1, 2.0, rng)
    assert (slowed.x[0][0], slowed.y[0][0]) == pytest.approx((0.95, 1.1))


def test_sgda_converges_on_strongly_convex_concave() -> None:
    """Simultaneous steps reach the saddle of a strongly convex-concave function."""
    oracle = FunctionOracle(_quadratic)
    x, y = _start()
    rng = np.random.default_rng(0)
    for _ in range(500):
        result = sgda_step(x, y, oracle, 0.05, rng)
        x, y = result.x, result.y
    assert _distance(x, y) < 1e-3
    assert oracle.evaluations == 500


def test_pote_converges() -> None:
    """Inner ascent followed by an outer descent reaches the saddle."""
    oracle = FunctionOracle(_quadratic)
    x, y = _start()
    rng = np.random.default_rng(0)
    for _ in range(500):
        result = pote_outer(x, y, oracle, 5, 0.05, 0.05, rng)
        x, y = result.x, result.y
    assert _distance(x, y) < 1e-3
    # q inner calls plus one outer call per iteration
    assert oracle.evaluations == 500 * 6


def test_agda_and_gamma_gda_converge() -> None:
    """Alternating and two-rate steps reach the saddle as well."""
    oracle = FunctionOracle(_quadratic)
    rng = np.random.default_rng(0)
    x, y = _start()
    for _ in range(500):
        result = agda_step(x, y, oracle, 0.05, 0.05, rng)
        x, y = result.x, result.y
    assert _distance(x, y) < 1e-3
    x, y = _start()
    for _ in range(1000):
        result = gamma_gda_step(x, y, oracle, 0.05, 2.0, rng)
        x, y = result.x, result.y
    assert _distance(x, y) < 1e-3


def test_gamma_below_one_is_rejected() -> None:
    """gamma-GDA slows x down, never speeds it up."""
    x, y = _start()
    with pytest.raises(ConfigurationError):
        gamma_gda_step(
            x, y, FunctionOracle(_quadratic), 0.05, 0.5, np.random.default_rng()
        )


def test_unrolled_gradient_matches_differences() -> None:
    """The x-gradient through q recorded ascent steps passes a gradient check."""
    oracle = FunctionOracle(
        _noisy_bilinear, lambda rng: rng.uniform(0.5, 1.5, size=3)
    )
    tape = Tape()
    x = [tape.input(np.array([0.3, -0.7, 1.1]))]
    y = [tape.input(np.array([0.2, 0.4, -0.6]))]
    total = unrolled_objective(x, y, oracle, 3, 0.1, tape, seed=7)
    tape.mark_output(total)
    report = ad.grad_check(tape, tape.input_vector())
    assert report.passed, f"max error {report.max_error}"


def test_poteb_step_follows_the_unrolled_gradient() -> None:
    """poteb_step descends x along the gradient of f(x, y^q)."""
    oracle = FunctionOracle(_noisy_bilinear, lambda rng: np.ones(3))
    x0 = [np.array([0.3, -0.7, 1.1])]
    y0 = [np.array([0.2, 0.4, -0.6])]
    result = poteb_step(x0, y0, oracle, 3, 0.1, 0.01, np.random.default_rng(0))

    tape = Tape()
    x_vars = [tape.input(x0[0])]
    y_vars = [tape.input(y0[0])]
    total = unrolled_objective(x_vars, y_vars, oracle, 3, 0.1, tape, seed=0)
    (grad,) = tape.gradient(total, x_vars)
    np.testing.assert_allclose(result.x[0], x0[0] - 0.01 * grad)


def test_poteb_adam_moves_only_x() -> None:
    """Under Adam the unrolled y step is still a plain ascent step."""
    oracle = FunctionOracle(_noisy_bilinear, lambda rng: np.ones(3))
    x0 = [np.array([0.3, -0.7, 1.1])]
    y0 = [np.array([0.2, 0.4, -0.6])]
    result = poteb_step(
        x0, y0, oracle, 1, 0.1, 0.01, np.random.default_rng(0), AdamUpdater(x0)
    )

    tape = Tape()
    x_vars = [tape.input(x0[0])]
    y_vars = [tape.input(y0[0])]
    loss = oracle.record(tape, x_vars, y_vars, np.random.default_rng(0))
    (grad_y,) = tape.gradient(loss, y_vars)
    np.testing.assert_allclose(result.y[0], y0[0] + 0.1 * grad_y)

    tape = Tape()
    x_vars = [tape.input(x0[0])]
    y_vars = [tape.input(y0[0])]
    total = unrolled_objective(x_vars, y_vars, oracle, 1, 0.1, tape, seed=0)
    (grad_x,) = tape.gradient(total, x_vars)
    np.testing.assert_allclose(result.x[0], x0[0] - 0.01 * np.sign(grad_x), atol=1e-6)


def test_unrolled_tape_grows_linearly() -> None:
    """Every recorded ascent step adds the same number of tape nodes."""
    oracle = FunctionOracle(_noisy_bilinear, lambda rng: np.ones(3))
    sizes = []
    for steps in (1, 2, 3, 4, 5):
        tape = Tape()
        x_vars = [tape.input(np.array([0.3, -0.7, 1.1]))]
        y_vars = [tape.input(np.array([0.2, 0.4, -0.6]))]
        unrolled_objective(x_vars, y_vars, oracle, steps, 0.1, tape, seed=0)
        sizes.append(len(tape))
    growth = np.diff(sizes)
    assert growth[0] > 0
    assert np.all(growth == growth[0])


@pytest.mark.parametrize("inner_steps", [0, 51])
def test_poteb_bounds_the_unrolled_steps(inner_steps: int) -> None:
    """q must lie in 1..50."""
    x, y = _start()
    with pytest.raises(ConfigurationError):
        poteb_step(
            x, y, FunctionOracle(_quadratic), inner_steps, 0.1, 0.1,
            np.random.default_rng(),
        )


def test_first_adam_step_moves_by_the_rate() -> None:
    """After bias correction the first step is about rate * sign(g)."""
    params = [np.array([1.0, -2.0])]
    grads = [np.array([0.3, -40.0])]
    state, updated = adam_update(OptState.zeros(params), params, grads, 0.01)
    assert state.step == 1
    expected = params[0] - 0.01 * np.sign(grads[0])
    np.testing.assert_allclose(updated[0], expected, atol=1e-6)
    _, ascended = adam_update(OptState.zeros(params), params, grads, 0.01, ascend=True)
    expected = params[0] + 0.01 * np.sign(grads[0])
    np.testing.assert_allclose(ascended[0], expected, atol=1e-6)


def test_adam_rejects_bad_gradients() -> None:
    """Non-finite or misshapen gradients raise OptimizerError."""
    params = [np.zeros(2)]
    with pytest.raises(OptimizerError):
        adam_update(OptState.zeros(params), params, [np.array([np.nan, 0.0])], 0.1)
    with pytest.raises(OptimizerError):
        adam_update(OptState.zeros(params), params, [np.zeros(3)], 0.1)


def test_adam_updater_keeps_state() -> None:
    """The updater counts its steps across calls."""
    params = [np.zeros(2)]
    updater = AdamUpdater(params)
    for _ in range(3):
        params = updater.step(params, [np.ones(2)], 0.1, ascend=False)
    assert updater.state.step == 3


def test_solver_runs_and_traces(tmp_path: Path) -> None:
    """The solver writes one trace row per epoch with the header row."""
    config = MinMaxConfig(algorithm="sgda", epochs=4, optimizer="adam", log_every=2)
    x, y = _start()
    _, _, trace = MinMaxSolver(config).run(
        FunctionOracle(_quadratic), x, y, np.random.default_rng(0), time_step=2
    )
    assert len(trace) == 4
    assert [row.epoch for row in trace.rows] == [0, 1, 2, 3]
    path = tmp_path / "trace.csv"
    trace.write_csv(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "epoch,outer_loss,inner_loss,wall_time,time_step"
    assert lines[1].endswith(",2")


def test_value_scale_flips_the_trace() -> None:
    """Trace losses are reported in the game's own units."""
    config = MinMaxConfig(algorithm="sgda", epochs=1)
    x, y = _start()
    _, _, trace = MinMaxSolver(config).run(
        FunctionOracle(_quadratic), x, y, np.random.default_rng(0), value_scale=-1.0
    )
    # f(1, -0.5) = 0.5 - 0.125 - 0.5
    assert trace.rows[0].outer_loss == pytest.approx(0.125)


def test_nan_loss_stops_training() -> None:
    """A non-finite objective aborts with the epoch it happened at."""

    def broken(x: Sequence[Operand], y: Sequence[Operand], _: object) -> Operand:
        return ad.mul(_quadratic(x, y, None), np.nan)

    config = MinMaxConfig(algorithm="sgda", epochs=3)
    x, y = _start()
    with pytest.raises(TrainingError) as info:
        MinMaxSolver(config).run(FunctionOracle(broken), x, y, np.random.default_rng(0))
    assert info.value.epoch == 0


def test_sg_rate_decays_to_the_floor() -> None:
    """SG rates fall linearly from the base rate to the floor."""
    config = MinMaxConfig(epochs=11, optimizer="sg-linear-decay", sg_floor=1e-5)
    solver = MinMaxSolver(config)
    assert solver.rate(0.1, 0) == pytest.approx(0.1)
    assert solver.rate(0.1, 10) == pytest.approx(1e-5)
    assert solver.rate(0.1, 5) == pytest.approx((0.1 + 1e-5) / 2)
    adam = MinMaxSolver(MinMaxConfig(epochs=11))
    assert adam.rate(0.1, 10) == 0.1


def test_poteb_config_rejects_long_unrolls() -> None:
    """The config refuses poteb with more than 50 inner steps."""
    with pytest.raises(ValueError):
        MinMaxConfig(algorithm="poteb", inner_steps=60)
