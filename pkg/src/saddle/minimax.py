"""Minimax module. Stochastic gradient descent-ascent optimizers.

The x parameters are descended, the y parameters ascended. Every algorithm
talks to its objective through a gradient oracle that draws a fresh minibatch
from the generator it is handed on each call.
"""

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Operand, Tape, Var
from .config import MinMaxConfig
from .const import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, MAX_UNROLLED_STEPS
from .exceptions import ConfigurationError, OptimizerError, TrainingError

logger = logging.getLogger(__name__)

__all__ = [
    "AdamUpdater",
    "FunctionOracle",
    "GradientOracle",
    "GradientUpdater",
    "MinMaxConfig",
    "MinMaxSolver",
    "OptState",
    "StepResult",
    "TraceRow",
    "TrainingTrace",
    "adam_update",
    "agda_step",
    "gamma_gda_step",
    "pote_outer",
    "poteb_step",
    "sgda_step",
]

Params = list[Array]


class GradientOracle(Protocol):
    """Stochastic objective f(x, y, z) with a fresh sample z per call."""

    evaluations: int

    def value_and_grad(
        self, x: Sequence[Array], y: Sequence[Array], rng: np.random.Generator
    ) -> tuple[float, Params, Params]:
        """Objective value and gradients in x and y on one fresh sample."""

    def record(
        self,
        tape: Tape,
        x: Sequence[Operand],
        y: Sequence[Operand],
        rng: np.random.Generator,
    ) -> Var:
        """Record the objective on ``tape`` for one fresh sample."""


class FunctionOracle:
    """Gradient oracle around a tape-traceable function.

    Args:
        function: ``function(x, y, sample)`` returning a scalar; ``x`` and ``y``
            are lists of arrays or tape variables.
        sampler: Draws the sample passed to ``function`` (None when omitted).
    """

    def __init__(
        self,
        function: Callable[[Sequence[Operand], Sequence[Operand], Any], Operand],
        sampler: Callable[[np.random.Generator], Any] | None = None,
    ) -> None:
        self.function = function
        self.sampler = sampler
        self.evaluations = 0

    def _draw(self, rng: np.random.Generator) -> Any:
        return None if self.sampler is None else self.sampler(rng)

    def record(
        self,
        tape: Tape,
        x: Sequence[Operand],
        y: Sequence[Operand],
        rng: np.random.Generator,
    ) -> Var:
        self.evaluations += 1
        return tape.lift(self.function(x, y, self._draw(rng)))

    def value_and_grad(
        self, x: Sequence[Array], y: Sequence[Array], rng: np.random.Generator
    ) -> tuple[float, Params, Params]:
        self.evaluations += 1
        tape = Tape()
        x_vars = [tape.input(p) for p in x]
        y_vars = [tape.input(p) for p in y]
        loss = tape.lift(self.function(x_vars, y_vars, self._draw(rng)))
        grads = tape.gradient(loss, x_vars + y_vars)
        return float(loss.value), grads[: len(x)], grads[len(x) :]


@dataclass
class OptState:
    """Adam moments and step counter for one parameter group."""

    first: Params
    second: Params
    step: int = 0

    @classmethod
    def zeros(cls, params: Sequence[Array]) -> "OptState":
        """Fresh state shaped like ``params``."""
        return cls(
            [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params]
        )


def _check_finite(arrays: Sequence[Array], what: str) -> None:
    for array in arrays:
        if not np.all(np.isfinite(array)):
            raise OptimizerError(f"Non-finite {what} encountered")


def adam_update(
    state: OptState,
    params: Sequence[Array],
    grads: Sequence[Array],
    rate: float,
    ascend: bool = False,
    betas: tuple[float, float] = (ADAM_BETA1, ADAM_BETA2),
    eps: float = ADAM_EPS,
) -> tuple[OptState, Params]:
    """One bias-corrected Adam step.

    Args:
        state: Moments before the step.
        params: Current parameters.
        grads: Gradients at ``params``.
        rate: Learning rate.
        ascend: Move up the gradient instead of down.
        betas: Moment decay rates.
        eps: Denominator guard.

    Returns:
        The new state and the updated parameters.

    Raises:
        OptimizerError: On non-finite gradients or shape mismatches.
    """
    if len(params) != len(grads) or any(
        np.shape(p) != np.shape(g) for p, g in zip(params, grads)
    ):
        raise OptimizerError("Gradient shapes do not match parameter shapes")
    _check_finite(grads, "gradient")

    beta1, beta2 = betas
    step = state.step + 1
    correction1 = 1.0 - beta1**step
    correction2 = 1.0 - beta2**step
    direction = 1.0 if ascend else -1.0

    first, second, updated = [], [], []
    for param, grad, m, v in zip(params, grads, state.first, state.second):
        m_new = beta1 * m + (1.0 - beta1) * grad
        v_new = beta2 * v + (1.0 - beta2) * grad * grad
        m_hat = m_new / correction1
        v_hat = v_new / correction2
        updated.append(param + direction * rate * m_hat / (np.sqrt(v_hat) + eps))
        first.append(m_new)
        second.append(v_new)
    _check_finite(updated, "parameter update")
    return OptState(first, second, step), updated


class GradientUpdater:
    """Plain stochastic gradient steps."""

    def step(
        self, params: Sequence[Array], grads: Sequence[Array], rate: float, ascend: bool
    ) -> Params:
        """Move ``params`` by ``rate`` along (or against) ``grads``."""
        _check_finite(grads, "gradient")
        sign = 1.0 if ascend else -1.0
        return [p + sign * rate * g for p, g in zip(params, grads)]


class AdamUpdater(GradientUpdater):
    """Adam steps with state kept per parameter group."""

    def __init__(
        self,
        params: Sequence[Array],
        betas: tuple[float, float] = (ADAM_BETA1, ADAM_BETA2),
        eps: float = ADAM_EPS,
    ) -> None:
        self.state = OptState.zeros(params)
        self.betas = betas
        self.eps = eps

    def step(
        self, params: Sequence[Array], grads: Sequence[Array], rate: float, ascend: bool
    ) -> Params:
        self.state, updated = adam_update(
            self.state, params, grads, rate, ascend, self.betas, self.eps
        )
        return updated


@dataclass(frozen=True)
class StepResult:
    """Parameters after one outer iteration and the losses seen on the way."""

    x: Params
    y: Params
    outer_loss: float
    inner_loss: float


def _updaters(
    x_updater: GradientUpdater | None, y_updater: GradientUpdater | None
) -> tuple[GradientUpdater, GradientUpdater]:
    return x_updater or GradientUpdater(), y_updater or GradientUpdater()


def sgda_step(
    x: Sequence[Array],
    y: Sequence[Array],
    oracle: GradientOracle,
    eta: float,
    rng: np.random.Generator,
    x_updater: GradientUpdater | None = None,
    y_updater: GradientUpdater | None = None,
) -> StepResult:
    """Simultaneous descent on x and ascent on y on one shared minibatch."""
    x_up, y_up = _updaters(x_updater, y_updater)
    value, grad_x, grad_y = oracle.value_and_grad(x, y, rng)
    return StepResult(
        x_up.step(x, grad_x, eta, ascend=False),
        y_up.step(y, grad_y, eta, ascend=True),
        value,
        value,
    )


def agda_step(
    x: Sequence[Array],
    y: Sequence[Array],
    oracle: GradientOracle,
    eta_x: float,
    eta_y: float,
    rng: np.random.Generator,
    x_updater: GradientUpdater | None = None,
    y_updater: GradientUpdater | None = None,
) -> StepResult:
    """Descent on x, then ascent on y at the new x, on independent minibatches."""
    x_up, y_up = _updaters(x_updater, y_updater)
    outer, grad_x, _ = oracle.value_and_grad(x, y, rng)
    new_x = x_up.step(x, grad_x, eta_x, ascend=False)
    inner, _, grad_y = oracle.value_and_grad(new_x, y, rng)
    return StepResult(new_x, y_up.step(y, grad_y, eta_y, ascend=True), outer, inner)


def gamma_gda_step(
    x: Sequence[Array],
    y: Sequence[Array],
    oracle: GradientOracle,
    eta: float,
    gamma: float,
    rng: np.random.Generator,
    x_updater: GradientUpdater | None = None,
    y_updater: GradientUpdater | None = None,
) -> StepResult:
    """Simultaneous step with the x rate slowed down to eta/gamma."""
    if gamma < 1:
        raise ConfigurationError(f"gamma must be at least 1, got {gamma}")
    x_up, y_up = _updaters(x_updater, y_updater)
    value, grad_x, grad_y = oracle.value_and_grad(x, y, rng)
    return StepResult(
        x_up.step(x, grad_x, eta / gamma, ascend=False),
        y_up.step(y, grad_y, eta, ascend=True),
        value,
        value,
    )


def pote_outer(
    x: Sequence[Array],
    y: Sequence[Array],
    oracle: GradientOracle,
    inner_steps: int,
    inner_rate: float,
    outer_rate: float,
    rng: np.random.Generator,
    x_updater: GradientUpdater | None = None,
    y_updater: GradientUpdater | None = None,
) -> StepResult:
    """``inner_steps`` ascent steps on y, then one descent step on x.

    Each gradient call draws its own minibatch. The inner rate starts from
    ``inner_rate`` again at every outer iteration.
    """
    if inner_steps < 1:
        raise ConfigurationError(f"inner_steps must be >= 1, got {inner_steps}")
    x_up, y_up = _updaters(x_updater, y_updater)
    current = list(y)
    inner = float("nan")
    for _ in range(inner_steps):
        inner, _, grad_y = oracle.value_and_grad(x, current, rng)
        current = y_up.step(current, grad_y, inner_rate, ascend=True)
    outer, grad_x, _ = oracle.value_and_grad(x, current, rng)
    x_next = x_up.step(x, grad_x, outer_rate, ascend=False)
    return StepResult(x_next, current, outer, inner)


def poteb_step(
    x: Sequence[Array],
    y: Sequence[Array],
    oracle: GradientOracle,
    inner_steps: int,
    inner_rate: float,
    outer_rate: float,
    rng: np.random.Generator,
    x_updater: GradientUpdater | None = None,
) -> StepResult:
    """Descent on x of f(x, y^q), differentiating through the inner ascent.

    The q plain ascent steps y^{k+1} = y^k + rho grad_y f(x, y^k) are recorded
    on one tape together with their own adjoints, so the final backward pass
    sees how y^q depends on x. The inner rate is a constant, not a
    differentiated input. The unrolled steps stay plain gradient steps under
    every optimizer; ``x_updater`` (Adam or SG) only moves x. y is replaced
    by y^q.

    Raises:
        ConfigurationError: If ``inner_steps`` is outside 1..50.
    """
    if not 1 <= inner_steps <= MAX_UNROLLED_STEPS:
        raise ConfigurationError(
            f"poteb needs 1 <= inner_steps <= {MAX_UNROLLED_STEPS}, got {inner_steps}"
        )
    x_up = x_updater or GradientUpdater()
    tape = Tape()
    x_vars = [tape.input(p) for p in x]
    current: list[Operand] = [tape.input(p) for p in y]

    inner = float("nan")
    for _ in range(inner_steps):
        loss = oracle.record(tape, x_vars, current, rng)
        inner = float(loss.value)
        grads = tape.gradient(
            loss, current, create_graph=True  # type: ignore[arg-type]
        )
        current = [ad.add(c, ad.mul(inner_rate, g)) for c, g in zip(current, grads)]

    final = oracle.record(tape, x_vars, current, rng)
    grad_x = tape.gradient(final, x_vars)
    new_y = [np.array(ad.value_of(c)) for c in current]
    return StepResult(
        x_up.step(x, grad_x, outer_rate, ascend=False),
        new_y,
        float(final.value),
        inner,
    )


def unrolled_objective(
    x: Sequence[Operand],
    y: Sequence[Operand],
    oracle: GradientOracle,
    inner_steps: int,
    inner_rate: float,
    tape: Tape,
    seed: int,
) -> Var:
    """f(x, y^q) after q recorded ascent steps, for gradient checking.

    Every objective call uses a generator rebuilt from ``seed`` so replays of
    the tape see the same samples.
    """
    current = list(y)
    for _ in range(inner_steps):
        loss = oracle.record(tape, x, current, np.random.default_rng(seed))
        grads = tape.gradient(
            loss, current, create_graph=True  # type: ignore[arg-type]
        )
        current = [ad.add(c, ad.mul(inner_rate, g)) for c, g in zip(current, grads)]
    return oracle.record(tape, x, current, np.random.default_rng(seed))


@dataclass(frozen=True)
class TraceRow:
    """One outer iteration of a training run."""

    epoch: int
    outer_loss: float
    inner_loss: float
    wall_time: float
    time_step: int = -1


@dataclass
class TrainingTrace:
    """Per-epoch losses of a training run."""

    rows: list[TraceRow] = field(default_factory=list)

    def extend(self, other: "TrainingTrace") -> None:
        """Append another trace's rows."""
        self.rows.extend(other.rows)

    @property
    def outer_losses(self) -> list[float]:
        """Outer losses in epoch order."""
        return [row.outer_loss for row in self.rows]

    def write_csv(self, path: Path | str) -> None:
        """Write epoch, outer_loss, inner_loss, wall_time, time_step rows."""
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(
                ["epoch", "outer_loss", "inner_loss", "wall_time", "time_step"]
            )
            for row in self.rows:
                writer.writerow(
                    [
                        row.epoch,
                        repr(row.outer_loss),
                        repr(row.inner_loss),
                        f"{row.wall_time:.6f}",
                        row.time_step,
                    ]
                )

    def __len__(self) -> int:
        return len(self.rows)


class MinMaxSolver:
    """Runs the configured algorithm for ``config.epochs`` outer iterations."""

    def __init__(self, config: MinMaxConfig) -> None:
        self.config = config

    def rate(self, base: float, epoch: int) -> float:
        """Rate at an outer iteration: constant under Adam, linear decay under SG."""
        if self.config.optimizer == "adam":
            return base
        span = max(self.config.epochs - 1, 1)
        fraction = min(epoch / span, 1.0)
        return base + (self.config.sg_floor - base) * fraction

    def _make_updater(self, params: Sequence[Array]) -> GradientUpdater:
        if self.config.optimizer == "adam":
            return AdamUpdater(
                params,
                (self.config.adam_beta1, self.config.adam_beta2),
                self.config.adam_eps,
            )
        return GradientUpdater()

    def outer_step(
        self,
        x: Sequence[Array],
        y: Sequence[Array],
        oracle: GradientOracle,
        epoch: int,
        rng: np.random.Generator,
        x_updater: GradientUpdater,
        y_updater: GradientUpdater,
    ) -> StepResult:
        """One outer iteration of the configured algorithm."""
        config = self.config
        eta = self.rate(config.outer_rate, epoch)
        rho = self.rate(config.inner_rate, epoch)
        if config.algorithm == "sgda":
            return sgda_step(x, y, oracle, eta, rng, x_updater, y_updater)
        if config.algorithm == "agda":
            return agda_step(x, y, oracle, eta, rho, rng, x_updater, y_updater)
        if config.algorithm == "gamma-gda":
            return gamma_gda_step(
                x, y, oracle, eta, config.gamma, rng, x_updater, y_updater
            )
        if config.algorithm == "pote":
            return pote_outer(
                x, y, oracle, config.inner_steps, rho, eta, rng, x_updater, y_updater
            )
        return poteb_step(x, y, oracle, config.inner_steps, rho, eta, rng, x_updater)

    def run(
        self,
        oracle: GradientOracle,
        x: Sequence[Array],
        y: Sequence[Array],
        rng: np.random.Generator,
        value_scale: float = 1.0,
        time_step: int = -1,
    ) -> tuple[Params, Params, TrainingTrace]:
        """Train from (x, y).

        Args:
            oracle: Objective to descend in x and ascend in y.
            x: Initial descent parameters.
            y: Initial ascent parameters.
            rng: Source of every minibatch.
            value_scale: Factor applied to objective values before tracing.
            time_step: Time step recorded in the trace rows.

        Returns:
            Final x, final y and the trace.

        Raises:
            TrainingError: If an outer loss is not finite.
        """
        config = self.config
        x_updater = self._make_updater(x)
        y_updater = self._make_updater(y)
        current_x, current_y = list(x), list(y)
        trace = TrainingTrace()
        start = time.perf_counter()
        logger.info(
            "Training %s/%s for %d epochs (q=%d, batch=%d)",
            config.algorithm,
            config.optimizer,
            config.epochs,
            config.inner_steps,
            config.batch_size,
        )
        for epoch in range(config.epochs):
            try:
                result = self.outer_step(
                    current_x, current_y, oracle, epoch, rng, x_updater, y_updater
                )
            except OptimizerError as exc:
                raise TrainingError(
                    f"Optimizer failed at epoch {epoch}: {exc}", epoch
                ) from exc
            if not np.isfinite(result.outer_loss):
                raise TrainingError(f"Non-finite loss at epoch {epoch}", epoch)
            current_x, current_y = result.x, result.y
            trace.rows.append(
                TraceRow(
                    epoch,
                    value_scale * result.outer_loss,
                    value_scale * result.inner_loss,
                    time.perf_counter() - start,
                    time_step,
                )
            )
            if (epoch + 1) % config.log_every == 0:
                logger.info(
                    "epoch %d/%d outer %.6f inner %.6f",
                    epoch + 1,
                    config.epochs,
                    value_scale * result.outer_loss,
                    value_scale * result.inner_loss,
                )
        return current_x, current_y, trace
