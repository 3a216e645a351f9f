"""Command-line entry point: train, evaluate, oracle and bench subcommands.

Every run writes into one output directory::

    <out>/config.ini     snapshot of the effective configuration
    <out>/weights/       alpha_k.w and b_k.w per time step
    <out>/grids/         value and sign grids
    <out>/tables/        reports and benchmark tables
    <out>/trace.csv      per-epoch training losses
"""

import argparse
import logging
import sys
from functools import partial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import benchmarks
from .autodiff import Array
from .benchmarks import Preset, preset
from .config import ALGORITHMS, MinMaxConfig, RunConfig
from .const import BOX_ENLARGEMENT
from .exceptions import (
    ConfigurationError,
    InstanceTooLargeError,
    LoadError,
    MetricError,
    OptimizerError,
    RolloutError,
    SaddleException,
    TrainingError,
)
from .game import (
    StrategyPair,
    argminmax_certificate,
    mc_expectation_equivalence_test,
    train,
    value_estimate,
)
from .metrics import (
    Box,
    ErrorReport,
    level_set_grid,
    ordering_violation_fraction,
    write_table_csv,
)
from .oracle import (
    ControlGrid,
    FiniteInstance,
    GridValue,
    grid_dpp_solve,
    theorem1_enumerate,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ARTIFACT = 3
EXIT_NUMERIC = 4

_EXIT_CODES: tuple[tuple[type[SaddleException], int], ...] = (
    (ConfigurationError, EXIT_CONFIG),
    (InstanceTooLargeError, EXIT_CONFIG),
    (LoadError, EXIT_ARTIFACT),
    (RolloutError, EXIT_NUMERIC),
    (TrainingError, EXIT_NUMERIC),
    (OptimizerError, EXIT_NUMERIC),
    (MetricError, EXIT_NUMERIC),
)

CONFIG_FILE = "config.ini"


class RunDirectory:
    """Paths of one output directory."""

    def __init__(self, root: Path | str) -> None:
        self.root = Path(root)

    @property
    def weights(self) -> Path:
        return self.root / "weights"

    @property
    def grids(self) -> Path:
        return self.root / "grids"

    @property
    def tables(self) -> Path:
        return self.root / "tables"

    @property
    def trace(self) -> Path:
        return self.root / "trace.csv"

    @property
    def config(self) -> Path:
        return self.root / CONFIG_FILE

    def prepare(self, config: RunConfig) -> None:
        """Create the directory tree and write the config snapshot."""
        for path in (self.root, self.weights, self.grids, self.tables):
            path.mkdir(parents=True, exist_ok=True)
        self.config.write_text(config.to_text(), encoding="utf-8")

    def __repr__(self) -> str:
        return f"<RunDirectory: {self.root}>"


def run_preset(config: RunConfig) -> Preset:
    """The preset named in [run], on its configured time grid."""
    run = config.run
    return preset(run.preset, run.steps, run.legacy_dynamics, run.substeps)


def training_config(config: RunConfig, chosen: Preset) -> MinMaxConfig:
    """The [train] section when given, otherwise the preset's recommended settings."""
    if "train" in config.model_fields_set:
        return config.train
    if config.run.mode == "reversed" and chosen.reversed_config is not None:
        return chosen.reversed_config
    return chosen.config


def _load_strategies(directory: RunDirectory, chosen: Preset) -> StrategyPair:
    return StrategyPair.load(directory.weights, chosen.spec)


def cmd_train(config: RunConfig) -> int:
    """Train strategies for the configured preset and write weights and trace."""
    chosen = run_preset(config)
    settings = training_config(config, chosen)
    directory = RunDirectory(config.run.out)
    directory.prepare(config.model_copy(update={"train": settings}))
    strategies, trace = train(
        chosen.spec, settings, config.run.mode, config.run.seed, config.run.workers
    )
    strategies.save(directory.weights)
    trace.write_csv(directory.trace)
    if config.run.mode != "reversed":
        report = argminmax_certificate(
            chosen.spec, strategies, settings, config.run.seed
        )
        row = [
            report.before,
            report.after,
            report.improvement,
            report.tolerance,
            report.passed,
        ]
        write_table_csv(
            directory.tables / "certificate.csv",
            ["before", "after", "improvement", "tolerance", "passed"],
            [row],
        )
        if not report.passed:
            logger.warning(
                "Inner player still improves by %.3e after training",
                report.improvement,
            )
    print(f"trained {chosen.name} ({config.run.mode}) into {directory.weights}")
    return EXIT_OK


def _pair_values(config: RunConfig, box: Box) -> tuple[str, Array]:
    pair_root = Path(config.evaluate.pair_dir or "")
    pair_config = RunConfig.from_file(pair_root / CONFIG_FILE)
    pair = run_preset(pair_config)
    strategies = _load_strategies(RunDirectory(pair_root), pair)
    return pair.name, value_estimate(pair.spec, strategies, box.points())


def cmd_evaluate(config: RunConfig) -> int:
    """Tabulate the trained value on a grid and compare it with the reference."""
    chosen = run_preset(config)
    directory = RunDirectory(config.run.out)
    strategies = _load_strategies(directory, chosen)
    settings = config.evaluate
    fixed = tuple(settings.slice_values) or chosen.slice
    axes = chosen.spec.state_dim - len(fixed)
    if axes < 1:
        raise ConfigurationError(
            f"A slice of {len(fixed)} values leaves no free axis in {chosen.name}"
        )
    spec = chosen.spec
    box = Box.cube(spec.lower[:axes], spec.upper[:axes], settings.resolution)
    grid = level_set_grid(partial(value_estimate, spec, strategies), box, fixed)
    grid.write(directory.grids, "value")
    directory.tables.mkdir(parents=True, exist_ok=True)

    reference = chosen.reference_values(box) if not fixed else None
    if reference is not None:
        report = ErrorReport.compare(grid.values, reference, box, settings.eta_loc)
        report.write(directory.tables / "error_report.csv")
        print(f"e_L1,loc = {report.local_l1:.6e}")
        print(f"e_L1 = {report.global_l1:.6e}")
        print(f"sign agreement = {report.sign_agreement:.4f}")

    if settings.pair_dir is not None:
        if fixed:
            raise ConfigurationError("Paired comparison needs an unsliced evaluation")
        pair_name, pair_values = _pair_values(config, box)
        # the min-max run carries the lower value
        lower, upper = (chosen.name, grid.values), (pair_name, pair_values)
        if spec.sign < 0:
            lower, upper = upper, lower
        fraction = ordering_violation_fraction(lower[1], upper[1])
        write_table_csv(
            directory.tables / "ordering.csv",
            ["lower", "upper", "violation_fraction"],
            [[lower[0], upper[0], fraction]],
        )
        print(f"lower > upper + 0.05 on {fraction:.4f} of the nodes")
    return EXIT_OK


def _oracle_dpp(config: RunConfig, chosen: Preset, directory: RunDirectory) -> None:
    settings = config.oracle
    spec = chosen.spec
    box = Box.cube(spec.lower, spec.upper, settings.resolution)
    box = box.enlarged(BOX_ENLARGEMENT)
    controls = ControlGrid.for_game(spec, settings.control_points)
    levels = grid_dpp_solve(spec, box, controls, workers=config.run.workers)
    levels[-1].to_csv(directory.grids / "dpp_v0.csv", f"preset={chosen.name}")
    if chosen.reference_kind == "analytic":
        evaluation = chosen.evaluation_box(config.evaluate.resolution)
        reference = chosen.reference_values(evaluation)
        assert reference is not None
        report = ErrorReport.compare(
            levels[-1](evaluation.points()),
            reference,
            evaluation,
            config.evaluate.eta_loc,
        )
        report.write(directory.tables / "dpp_error_report.csv")
        print(f"e_L1,loc = {report.local_l1:.6e}")


def _oracle_analytic(
    config: RunConfig, chosen: Preset, directory: RunDirectory
) -> None:
    if chosen.reference_kind != "analytic" or chosen.reference is None:
        raise ConfigurationError(f"Preset {chosen.name} has no closed-form value")
    box = Box.cube(chosen.spec.lower, chosen.spec.upper, config.oracle.resolution)
    grid = GridValue.from_function(box, chosen.reference)
    grid.to_csv(directory.grids / "analytic_v0.csv", f"preset={chosen.name}")


def _oracle_theorem1(config: RunConfig, _: Preset, directory: RunDirectory) -> None:
    rows = []
    for index in range(config.oracle.instances):
        seeds = np.random.SeedSequence([config.run.seed, index])
        result = theorem1_enumerate(FiniteInstance.random(np.random.default_rng(seeds)))
        rows.append(
            [
                index,
                result.strategies,
                result.alternating,
                result.feedback,
                result.open_loop,
                result.max_gap,
            ]
        )
        print(
            f"instance {index}: {result.strategies:.12g} {result.alternating:.12g} "
            f"{result.feedback:.12g} (open loop {result.open_loop:.12g})"
        )
    write_table_csv(
        directory.tables / "theorem1.csv",
        ["instance", "strategies", "alternating", "feedback", "open_loop", "max_gap"],
        rows,
    )


def _oracle_rate(config: RunConfig, chosen: Preset, directory: RunDirectory) -> None:
    settings = config.oracle
    report = benchmarks.rate_check(
        chosen.name,
        settings.rate_steps,
        settings.reference_steps,
        settings.control_points,
        settings.resolution,
        config.run.workers,
    )
    write_table_csv(
        directory.tables / "rate.csv",
        ["steps", "error"],
        [[n, e] for n, e in zip(report.steps, report.errors)],
    )
    print(f"fitted slope = {report.slope:.4f}")


def _oracle_mc(config: RunConfig, chosen: Preset, directory: RunDirectory) -> None:
    spec = chosen.spec.with_steps(1)
    controls = ControlGrid.for_game(spec, config.oracle.control_points)
    report = mc_expectation_equivalence_test(
        spec,
        config.run.seed,
        controls.a_points,
        controls.b_points,
        config.oracle.samples,
    )
    row = [
        report.pointwise_mean,
        report.table_value,
        report.gap,
        report.standard_error,
        report.samples,
    ]
    write_table_csv(
        directory.tables / "mc.csv",
        ["pointwise_mean", "table_value", "gap", "standard_error", "samples"],
        [row],
    )
    print(f"gap = {report.gap:.6e}, standard error = {report.standard_error:.6e}")


_ORACLES: dict[str, Callable[[RunConfig, Preset, RunDirectory], None]] = {
    "dpp": _oracle_dpp,
    "analytic": _oracle_analytic,
    "theorem1": _oracle_theorem1,
    "rate": _oracle_rate,
    "mc": _oracle_mc,
}


def cmd_oracle(config: RunConfig) -> int:
    """Compute reference values of the kind named in [oracle]."""
    chosen = run_preset(config)
    directory = RunDirectory(config.run.out)
    directory.prepare(config)
    _ORACLES[config.oracle.kind](config, chosen, directory)
    return EXIT_OK


def cmd_bench(config: RunConfig) -> int:
    """Run the benchmark sweep named in [bench]."""
    settings = config.bench
    directory = RunDirectory(config.run.out)
    directory.prepare(config)
    training = config.train if "train" in config.model_fields_set else None
    if settings.kind == "ex2-table":
        rows = benchmarks.ex2_table(
            settings.steps,
            training,
            config.run.seed,
            config.evaluate.resolution,
            config.evaluate.eta_loc,
            config.run.workers,
        )
        write_table_csv(
            directory.tables / "ex2_table.csv",
            ["steps", "cpu_time", "e_l1_loc", "order"],
            [
                [r.steps, r.cpu_time, r.local_l1, "" if r.order is None else r.order]
                for r in rows
            ],
        )
        for row in rows:
            order = "-" if row.order is None else f"{row.order:.2f}"
            print(f"N={row.steps:3d}  e_L1,loc={row.local_l1:.3e}  order={order}")
        return EXIT_OK

    if not settings.algorithms:
        raise ConfigurationError("The rotation sweep needs at least one algorithm")
    table = []
    for algorithm in settings.algorithms:
        count = benchmarks.rotation_benchmark(
            algorithm,
            settings.optimizer,
            settings.runs,
            config.run.seed,
            settings.success_threshold,
            training,
            config.evaluate.resolution,
        )
        table.append([algorithm, settings.optimizer, count, settings.runs])
        print(f"{algorithm:10s} {settings.optimizer}: {count}/{settings.runs}")
    write_table_csv(
        directory.tables / "rotation.csv",
        ["algorithm", "optimizer", "successes", "runs"],
        table,
    )
    return EXIT_OK


_COMMANDS: dict[str, Callable[[RunConfig], int]] = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "oracle": cmd_oracle,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    """Argument parser for the ``saddle`` command."""
    parser = argparse.ArgumentParser(
        prog="saddle",
        description="Neural feedback strategies for zero-sum differential games",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", type=Path, default=None, help="INI config file")
    parser.add_argument("--out", type=str, default=None, help="Output directory")
    parser.add_argument("--seed", type=int, default=None, help="Overrides [run] seed")
    parser.add_argument("--workers", type=int, default=None, help="Worker threads")
    parser.add_argument("--verbose", action="store_true", help="Debug logging")
    parser.epilog = (
        f"presets: {', '.join(benchmarks.preset_names())}; "
        f"algorithms: {', '.join(ALGORITHMS)}"
    )
    return parser


def load_config(args: argparse.Namespace) -> RunConfig:
    """Config file (or defaults) with command-line overrides applied."""
    config = RunConfig.from_file(args.config) if args.config else RunConfig()
    flags = {"out": args.out, "seed": args.seed, "workers": args.workers}
    overrides = {key: value for key, value in flags.items() if value is not None}
    return config.with_run(**overrides) if overrides else config


def exit_code(exc: SaddleException) -> int:
    """Exit status for a library error."""
    for kind, code in _EXIT_CODES:
        if isinstance(exc, kind):
            return code
    return 1


def main(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit status."""
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger("saddle").setLevel(logging.DEBUG)
    try:
        config = load_config(args)
        return _COMMANDS[args.command](config)
    except SaddleException as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
