"""Game module. Semi-discrete games, feedback rollouts and the training schemes."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Array, Operand, Tape, Var
from .config import MinMaxConfig
from .const import BLOWUP_NORM
from .dynamics import CostFn, Dynamics, StepScheme, step_with_max
from .exceptions import ConfigurationError, LoadError, RolloutError
from .minimax import GradientUpdater, MinMaxSolver, TrainingTrace
from .nn import NetworkParams, OutputActivation

logger = logging.getLogger(__name__)

# Independent generator streams derived from one seed
_TRAIN_STREAM = 1
_CERTIFICATE_STREAM = 2
_MC_STREAM = 3

Sampler = Callable[[np.random.Generator, int], Array]


@dataclass(frozen=True)
class GameSpec:
    """A semi-discrete game: dynamics, costs, time grid and sampling box.

    Attributes:
        name: Label used in logs and artifact headers.
        dynamics: Controlled vector field f(x, a, b).
        terminal: Terminal cost phi, row-wise.
        obstacle: Obstacle cost g, row-wise, or None for no obstacle.
        horizon: Final time T.
        steps: Number N of macro time steps.
        scheme: Substep integrator.
        lower: Lower corner of the sampling box Omega.
        upper: Upper corner of the sampling box Omega.
        activation_a: Output activation of the alpha networks (the set A).
        activation_b: Output activation of the b networks (the set B).
        sign: +1 when alpha minimizes and b maximizes the cost, -1 for the
            swapped roles (sup over alpha of inf over b).
    """

    name: str
    dynamics: Dynamics
    terminal: CostFn
    obstacle: CostFn | None
    horizon: float
    steps: int
    scheme: StepScheme
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    activation_a: OutputActivation = OutputActivation.TANH
    activation_b: OutputActivation = OutputActivation.TANH
    sign: int = 1

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ConfigurationError(f"A game needs N >= 1 steps, got {self.steps}")
        if not self.horizon > 0:
            raise ConfigurationError(f"Horizon must be positive, got {self.horizon}")
        if len(self.lower) != self.dynamics.state_dim or len(self.upper) != len(
            self.lower
        ):
            raise ConfigurationError(
                f"Sampling box {self.lower}..{self.upper} does not match "
                f"state dimension {self.dynamics.state_dim}"
            )
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ConfigurationError(f"Empty sampling box {self.lower}..{self.upper}")
        if self.sign not in (1, -1):
            raise ConfigurationError(f"sign must be +1 or -1, got {self.sign}")

    @property
    def dt(self) -> float:
        """Macro time step T/N."""
        return self.horizon / self.steps

    @property
    def state_dim(self) -> int:
        """State dimension d."""
        return self.dynamics.state_dim

    def with_steps(self, steps: int) -> "GameSpec":
        """Same game on a different time grid."""
        return replace(self, steps=steps)

    def with_substeps(self, substeps: int) -> "GameSpec":
        """Same game with a different number of substeps."""
        return replace(self, scheme=StepScheme(self.scheme.kind, substeps))

    def sample(self, rng: np.random.Generator, size: int) -> Array:
        """Draw ``size`` states uniformly in Omega."""
        return rng.uniform(self.lower, self.upper, size=(size, self.state_dim))

    def __repr__(self) -> str:
        return f"<GameSpec: {self.name} N={self.steps} T={self.horizon:g}>"


@dataclass(frozen=True)
class StrategyPair:
    """Per-step feedback strategies alpha_k and adverse controls b_k.

    In the default mode alpha_k reads (x, b_k(x)); in reversed mode it reads
    x only. b_k always reads x.
    """

    alpha: tuple[NetworkParams, ...]
    b: tuple[NetworkParams, ...]
    reversed: bool = False

    def __post_init__(self) -> None:
        if len(self.alpha) != len(self.b) or not self.alpha:
            raise ConfigurationError(
                f"Need one alpha and one b network per step, got "
                f"{len(self.alpha)} and {len(self.b)}"
            )

    @classmethod
    def create(
        cls,
        spec: GameSpec,
        hidden_layers: int,
        width: int,
        seed: int,
        reversed: bool = False,  # pylint: disable=redefined-builtin
    ) -> "StrategyPair":
        """Freshly initialized networks for every step, deterministic in ``seed``."""
        d = spec.state_dim
        n_a = spec.dynamics.control_dim_a
        n_b = spec.dynamics.control_dim_b
        alpha_input = d if reversed else d + n_b
        seeds = np.random.SeedSequence(seed).spawn(2 * spec.steps)
        alpha = tuple(
            nn.new_network(
                alpha_input, n_a, hidden_layers, width, spec.activation_a, seeds[2 * k]
            )
            for k in range(spec.steps)
        )
        b = tuple(
            nn.new_network(
                d, n_b, hidden_layers, width, spec.activation_b, seeds[2 * k + 1]
            )
            for k in range(spec.steps)
        )
        return cls(alpha, b, reversed)

    @property
    def steps(self) -> int:
        """Number of time steps N."""
        return len(self.alpha)

    def check(self, spec: GameSpec) -> None:
        """Raise ConfigurationError if the networks do not fit ``spec``."""
        d = spec.state_dim
        alpha_input = d if self.reversed else d + spec.dynamics.control_dim_b
        if self.steps != spec.steps:
            raise ConfigurationError(
                f"Strategies cover {self.steps} steps, game has {spec.steps}"
            )
        for k, (alpha_k, b_k) in enumerate(zip(self.alpha, self.b)):
            if (alpha_k.input_dim, alpha_k.output_dim) != (
                alpha_input,
                spec.dynamics.control_dim_a,
            ) or (b_k.input_dim, b_k.output_dim) != (d, spec.dynamics.control_dim_b):
                raise ConfigurationError(
                    f"Network dimensions of step {k} do not fit {spec!r}"
                )

    def save(self, directory: Path | str) -> list[Path]:
        """Write ``alpha_k.w`` and ``b_k.w`` for every step."""
        target = Path(directory)
        target.mkdir(parents=True, exist_ok=True)
        written = []
        for k, (alpha_k, b_k) in enumerate(zip(self.alpha, self.b)):
            for prefix, network in (("alpha", alpha_k), ("b", b_k)):
                path = target / f"{prefix}_{k}.w"
                nn.save(network, path)
                written.append(path)
        logger.info("Saved %d weight files to %s", len(written), target)
        return written

    @classmethod
    def load(cls, directory: Path | str, spec: GameSpec) -> "StrategyPair":
        """Read the weight files written by ``save`` for a game.

        Raises:
            LoadError: If a file is missing, corrupt, or its dimensions do not
                fit ``spec``.
        """
        source = Path(directory)
        alpha = tuple(nn.load(source / f"alpha_{k}.w") for k in range(spec.steps))
        b = tuple(nn.load(source / f"b_{k}.w") for k in range(spec.steps))
        pair = cls(alpha, b, alpha[0].input_dim == spec.state_dim)
        try:
            pair.check(spec)
        except ConfigurationError as exc:
            raise LoadError(f"Weights in {source} do not fit {spec!r}: {exc}") from exc
        return pair

    def __repr__(self) -> str:
        mode = "reversed" if self.reversed else "feedback"
        return f"<StrategyPair: N={self.steps} {mode}>"


@dataclass(frozen=True)
class Rollout:
    """Trajectory and cost of a batch of rollouts."""

    states: list[Operand]
    controls_a: list[Operand]
    controls_b: list[Operand]
    obstacle_maxima: list[Operand | None]
    cost: Operand


def _guard(state: Operand, step: int) -> None:
    values = ad.value_of(state)
    if not np.all(np.isfinite(values)) or np.any(
        np.linalg.norm(values, axis=-1) > BLOWUP_NORM
    ):
        raise RolloutError(f"State blew up at step {step}", step)


def rollout(
    spec: GameSpec,
    strategies: StrategyPair,
    x: Operand,
    a_parameters: Sequence[Sequence[Operand] | None] | None = None,
    b_parameters: Sequence[Sequence[Operand] | None] | None = None,
    start_step: int = 0,
) -> Rollout:
    """Simulate the strategies from a batch of initial states.

    Args:
        spec: Game to play.
        strategies: Networks for every step.
        x: Initial states, (rows, d) or a single (d,) state.
        a_parameters: Per-step replacement parameters for alpha (None entries
            keep the stored ones), e.g. tape variables.
        b_parameters: Same for b.
        start_step: First macro step; earlier networks are unused.

    Returns:
        The rollout. ``cost`` has shape (rows, 1).

    Raises:
        RolloutError: If a state becomes non-finite or exceeds the blow-up
            norm; the error names the step.
    """
    if len(ad.shape_of(x)) == 1:
        x = np.asarray(x, dtype=np.float64)[None, :]
    if ad.shape_of(x)[-1] != spec.state_dim:
        raise ConfigurationError(
            f"States must have width {spec.state_dim}, got shape {ad.shape_of(x)}"
        )
    a_overrides = a_parameters or [None] * spec.steps
    b_overrides = b_parameters or [None] * spec.steps

    state = x
    states, controls_a, controls_b, maxima = [state], [], [], []
    running: Operand | None = None
    for k in range(start_step, spec.steps):
        b_k = nn.net_forward(strategies.b[k], state, b_overrides[k])
        alpha_input = state if strategies.reversed else ad.concat([state, b_k])
        a_k = nn.net_forward(strategies.alpha[k], alpha_input, a_overrides[k])
        state, step_max = step_with_max(
            spec.dynamics, state, a_k, b_k, spec.dt, spec.scheme, spec.obstacle
        )
        _guard(state, k)
        if step_max is not None:
            running = step_max if running is None else ad.maximum(running, step_max)
        states.append(state)
        controls_a.append(a_k)
        controls_b.append(b_k)
        maxima.append(step_max)

    terminal = spec.terminal(state)
    cost = terminal if running is None else ad.maximum(running, terminal)
    return Rollout(states, controls_a, controls_b, maxima, cost)


def batch_cost(
    spec: GameSpec,
    strategies: StrategyPair,
    sample: Operand,
    a_parameters: Sequence[Sequence[Operand] | None] | None = None,
    b_parameters: Sequence[Sequence[Operand] | None] | None = None,
    start_step: int = 0,
) -> Operand:
    """Mean rollout cost over a batch of initial states.

    Raises:
        ConfigurationError: If the batch is empty.
    """
    shape = ad.shape_of(sample)
    if len(shape) != 2 or shape[0] == 0:
        raise ConfigurationError(f"Expected a non-empty (rows, d) batch, got {shape}")
    cost = rollout(
        spec, strategies, sample, a_parameters, b_parameters, start_step
    ).cost
    return ad.mean(cost)


def value_estimate(
    spec: GameSpec, strategies: StrategyPair, x: Array, chunk: int = 4096
) -> Array:
    """Plug-in value: the rollout cost of the trained pair from each state.

    No clamping to Omega is applied.
    """
    points = np.asarray(x, dtype=np.float64)
    single = points.ndim == 1
    points = np.atleast_2d(points)
    values = [
        np.asarray(rollout(spec, strategies, points[i : i + chunk]).cost)[:, 0]
        for i in range(0, len(points), chunk)
    ]
    result = np.concatenate(values) if values else np.zeros(0)
    return result[0] if single else result


class GameObjective:
    """Batch cost of a game as a gradient oracle.

    x holds the descent player's parameters and y the ascent player's, for
    the trainable steps only, in step order. Networks of the other steps are
    frozen constants. The objective is ``scale * mean(J)`` where ``scale`` is
    chosen so that descending x moves the outer player in its direction.

    Args:
        spec: Game to play.
        strategies: Initial networks; also the frozen ones.
        batch_size: Rows per fresh minibatch.
        steps: Trainable steps (all steps from ``start_step`` when omitted).
        start_step: Step at which rollouts start.
        sample: Fixed batch used on every call instead of fresh draws.
        workers: Threads sharing a minibatch; shard results are summed in
            shard order.
    """

    def __init__(
        self,
        spec: GameSpec,
        strategies: StrategyPair,
        batch_size: int,
        steps: Sequence[int] | None = None,
        start_step: int = 0,
        sample: Array | None = None,
        workers: int = 1,
    ) -> None:
        strategies.check(spec)
        if batch_size < 1:
            raise ConfigurationError(f"Batch size must be >= 1, got {batch_size}")
        if workers < 1:
            raise ConfigurationError(f"workers must be >= 1, got {workers}")
        self.spec = spec
        self.strategies = strategies
        self.batch_size = batch_size
        self.start_step = start_step
        if steps is None:
            steps = range(start_step, spec.steps)
        self.steps = tuple(steps)
        self.sample = sample
        self.workers = workers
        self.evaluations = 0
        self.scale = -spec.sign if strategies.reversed else spec.sign
        self._per_network = len(strategies.alpha[0].parameters())

    @property
    def descent_networks(self) -> tuple[NetworkParams, ...]:
        """Networks of the outer (descending) player."""
        return self.strategies.b if self.strategies.reversed else self.strategies.alpha

    @property
    def ascent_networks(self) -> tuple[NetworkParams, ...]:
        """Networks of the inner (ascending) player."""
        return self.strategies.alpha if self.strategies.reversed else self.strategies.b

    def initial_parameters(self) -> tuple[list[Array], list[Array]]:
        """Current (x, y) parameter lists."""
        x = [p for k in self.steps for p in self.descent_networks[k].parameters()]
        y = [p for k in self.steps for p in self.ascent_networks[k].parameters()]
        return x, y

    def _per_step(self, flat: Sequence[Operand]) -> list[Sequence[Operand] | None]:
        overrides: list[Sequence[Operand] | None] = [None] * self.spec.steps
        size = self._per_network
        for i, k in enumerate(self.steps):
            overrides[k] = list(flat[i * size : (i + 1) * size])
        return overrides

    def to_strategies(self, x: Sequence[Array], y: Sequence[Array]) -> StrategyPair:
        """Strategies holding the given parameters at the trainable steps."""
        descent = list(self.descent_networks)
        ascent = list(self.ascent_networks)
        for k, params in enumerate(self._per_step(x)):
            if params is not None:
                descent[k] = descent[k].with_parameters(
                    params  # type: ignore[arg-type]
                )
        for k, params in enumerate(self._per_step(y)):
            if params is not None:
                ascent[k] = ascent[k].with_parameters(params)  # type: ignore[arg-type]
        if self.strategies.reversed:
            return StrategyPair(tuple(ascent), tuple(descent), True)
        return StrategyPair(tuple(descent), tuple(ascent), False)

    def _draw(self, rng: np.random.Generator) -> Array:
        if self.sample is not None:
            return self.sample
        return self.spec.sample(rng, self.batch_size)

    def _total(
        self, x: Sequence[Operand], y: Sequence[Operand], batch: Array
    ) -> Operand:
        descent, ascent = self._per_step(x), self._per_step(y)
        a_params, b_params = descent, ascent
        if self.strategies.reversed:
            a_params, b_params = ascent, descent
        cost = rollout(
            self.spec, self.strategies, batch, a_params, b_params, self.start_step
        ).cost
        return ad.mul(ad.reduce_sum(cost), float(self.scale))

    def record(
        self,
        tape: Tape,
        x: Sequence[Operand],
        y: Sequence[Operand],
        rng: np.random.Generator,
    ) -> Var:
        """Record the objective on ``tape`` for a fresh minibatch."""
        self.evaluations += 1
        batch = self._draw(rng)
        return tape.lift(ad.mul(self._total(x, y, batch), 1.0 / len(batch)))

    def _shard(
        self, x: Sequence[Array], y: Sequence[Array], batch: Array
    ) -> tuple[float, list[Array]]:
        tape = Tape()
        inputs = [tape.input(p) for p in x] + [tape.input(p) for p in y]
        total = tape.lift(self._total(inputs[: len(x)], inputs[len(x) :], batch))
        return float(total.value), tape.gradient(total, inputs)

    def value_and_grad(
        self, x: Sequence[Array], y: Sequence[Array], rng: np.random.Generator
    ) -> tuple[float, list[Array], list[Array]]:
        """Objective and gradients on a fresh minibatch."""
        self.evaluations += 1
        batch = self._draw(rng)
        shards = [s for s in np.array_split(batch, self.workers) if len(s)]
        if len(shards) == 1:
            results = [self._shard(x, y, shards[0])]
        else:
            with ThreadPoolExecutor(max_workers=len(shards)) as pool:
                results = list(pool.map(lambda s: self._shard(x, y, s), shards))

        value = 0.0
        grads = [np.zeros_like(p) for p in list(x) + list(y)]
        for shard_value, shard_grads in results:
            value += shard_value
            grads = [g + s for g, s in zip(grads, shard_grads)]
        rows = len(batch)
        grads = [g / rows for g in grads]
        return value / rows, grads[: len(x)], grads[len(x) :]

    def __repr__(self) -> str:
        return (
            f"<GameObjective: {self.spec.name} steps={list(self.steps)} "
            f"batch={self.batch_size}>"
        )


def training_rng(seed: int, step: int = 0) -> np.random.Generator:
    """Minibatch generator for training step ``step`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence([seed, _TRAIN_STREAM, step]))


def _train(
    objective: GameObjective, config: MinMaxConfig, seed: int, step: int
) -> tuple[StrategyPair, TrainingTrace]:
    x, y = objective.initial_parameters()
    x, y, trace = MinMaxSolver(config).run(
        objective, x, y, training_rng(seed, step), float(objective.scale), step
    )
    return objective.to_strategies(x, y), trace


def algorithm1_global(
    spec: GameSpec, config: MinMaxConfig, seed: int, workers: int = 1
) -> tuple[StrategyPair, TrainingTrace]:
    """Global scheme: all steps trained jointly on the full-horizon cost.

    Returns:
        Trained strategies and the per-epoch trace of mean cost.

    Raises:
        TrainingError: If the loss becomes non-finite.
    """
    logger.info("Global scheme on %r", spec)
    strategies = StrategyPair.create(spec, config.hidden_layers, config.width, seed)
    objective = GameObjective(spec, strategies, config.batch_size, workers=workers)
    return _train(objective, config, seed, 0)


def algorithm2_local(
    spec: GameSpec, config: MinMaxConfig, seed: int, workers: int = 1
) -> tuple[StrategyPair, TrainingTrace]:
    """Local scheme: steps N-1 down to 0, each trained from states sampled in Omega.

    Step n is trained on rollouts that start at step n; the already trained
    networks of steps n+1..N-1 re-simulate the suffix.
    """
    logger.info("Local scheme on %r", spec)
    strategies = StrategyPair.create(spec, config.hidden_layers, config.width, seed)
    trace = TrainingTrace()
    for step in reversed(range(spec.steps)):
        objective = GameObjective(
            spec, strategies, config.batch_size, (step,), step, workers=workers
        )
        strategies, step_trace = _train(objective, config, seed, step)
        trace.extend(step_trace)
        logger.info("Local scheme finished step %d", step)
    return strategies, trace


def reversed_supinf(
    spec: GameSpec, config: MinMaxConfig, seed: int, workers: int = 1
) -> tuple[StrategyPair, TrainingTrace]:
    """Sup over b of inf over state-feedback a: b is the outer player."""
    logger.info("Reversed scheme on %r", spec)
    strategies = StrategyPair.create(
        spec, config.hidden_layers, config.width, seed, reversed=True
    )
    objective = GameObjective(spec, strategies, config.batch_size, workers=workers)
    return _train(objective, config, seed, 0)


def train(
    spec: GameSpec, config: MinMaxConfig, mode: str, seed: int, workers: int = 1
) -> tuple[StrategyPair, TrainingTrace]:
    """Dispatch on ``mode`` (global, local or reversed)."""
    schemes = {
        "global": algorithm1_global,
        "local": algorithm2_local,
        "reversed": reversed_supinf,
    }
    if mode not in schemes:
        raise ConfigurationError(
            f"Unknown mode {mode!r}; expected one of {sorted(schemes)}"
        )
    return schemes[mode](spec, config, seed, workers)


@dataclass(frozen=True)
class CertificateReport:
    """Outcome of a fresh inner ascent against trained strategies."""

    before: float
    after: float
    tolerance: float

    @property
    def improvement(self) -> float:
        """Gain of the inner player, in objective units."""
        return self.after - self.before

    @property
    def passed(self) -> bool:
        """True if the inner player gained less than the tolerance."""
        return self.improvement < self.tolerance


def argminmax_certificate(
    spec: GameSpec, strategies: StrategyPair, config: MinMaxConfig, seed: int
) -> CertificateReport:
    """Run ``inner_steps`` fresh ascent steps for the inner player.

    The objective is measured on one fixed batch before and after the ascent.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, _CERTIFICATE_STREAM]))
    batch = spec.sample(rng, config.batch_size)
    objective = GameObjective(spec, strategies, config.batch_size, sample=batch)
    x, y = objective.initial_parameters()
    updater = GradientUpdater()
    before, _, grad_y = objective.value_and_grad(x, y, rng)
    for _ in range(config.inner_steps):
        y = updater.step(y, grad_y, config.inner_rate, ascend=True)
        after, _, grad_y = objective.value_and_grad(x, y, rng)
    logger.info("Certificate: objective %.6f -> %.6f", before, after)
    return CertificateReport(before, after, config.certificate_tolerance)


@dataclass(frozen=True)
class McReport:
    """Pointwise max-min expectation vs the max-min over feedback tables."""

    pointwise_mean: float
    table_value: float
    standard_error: float
    samples: int

    @property
    def gap(self) -> float:
        """Absolute difference of the two estimates."""
        return abs(self.pointwise_mean - self.table_value)


def one_step_payoffs(
    spec: GameSpec, states: Array, a_grid: Array, b_grid: Array
) -> Array:
    """Table Q[row, i, j] = G(x, a_i, b_j) v phi(F(x, a_i, b_j)) of a one-step game."""
    rows = len(states)
    table = np.empty((rows, len(a_grid), len(b_grid)))
    for j, b in enumerate(b_grid):
        b_rows = np.broadcast_to(b, (rows, len(b)))
        for i, a in enumerate(a_grid):
            a_rows = np.broadcast_to(a, (rows, len(a)))
            end, step_max = step_with_max(
                spec.dynamics,
                states,
                a_rows,
                b_rows,
                spec.dt,
                spec.scheme,
                spec.obstacle,
            )
            cost = np.asarray(spec.terminal(end))
            if step_max is not None:
                cost = np.maximum(np.asarray(step_max), cost)
            table[:, i, j] = cost[:, 0]
    return table


def mc_expectation_equivalence_test(
    spec: GameSpec,
    seed: int,
    a_grid: Array,
    b_grid: Array,
    samples: int = 10_000,
    independent_samples: bool = True,
    sampler: Sampler | None = None,
) -> McReport:
    """Compare E[max_b min_a Q(X, a, b)] with the max-min over feedback tables.

    The pointwise side draws a sample S1 and averages the per-state max-min.
    The table side draws S2 (S1 again when ``independent_samples`` is off) and
    solves the game over feedback tables alpha(x, b), b(x) on the empirical
    law of S2 by best responses. Both sides average over distinct states
    weighted by their multiplicity.

    Raises:
        ConfigurationError: If the game has more than one step or a control
            grid is empty.
    """
    if spec.steps != 1:
        raise ConfigurationError(f"The expectation test needs N = 1, got {spec.steps}")
    a_points = np.atleast_2d(np.asarray(a_grid, dtype=np.float64))
    b_points = np.atleast_2d(np.asarray(b_grid, dtype=np.float64))
    if a_points.size == 0 or b_points.size == 0:
        raise ConfigurationError("Control grids must be non-empty")
    draw = sampler or spec.sample
    rng = np.random.default_rng(np.random.SeedSequence([seed, _MC_STREAM]))

    first = draw(rng, samples)
    second = draw(rng, samples) if independent_samples else first

    unique, counts = np.unique(first, axis=0, return_counts=True)
    payoffs = one_step_payoffs(spec, unique, a_points, b_points)
    pointwise = payoffs.min(axis=1).max(axis=1)
    pointwise_mean = float(np.dot(counts, pointwise) / samples)

    unique2, counts2 = np.unique(second, axis=0, return_counts=True)
    table = one_step_payoffs(spec, unique2, a_points, b_points)
    alpha = table.argmin(axis=1)  # alpha(x, b_j)
    responses = np.take_along_axis(table, alpha[:, None, :], axis=1)[:, 0, :]
    b_choice = responses.argmax(axis=1)
    chosen = responses[np.arange(len(unique2)), b_choice]
    table_value = float(np.dot(counts2, chosen) / samples)

    variance = np.dot(counts, (pointwise - pointwise_mean) ** 2) / samples
    error = np.sqrt(variance / samples)
    if independent_samples:
        variance2 = np.dot(counts2, (chosen - table_value) ** 2) / samples
        error = np.sqrt(variance / samples + variance2 / samples)
    return McReport(pointwise_mean, table_value, float(error), samples)

