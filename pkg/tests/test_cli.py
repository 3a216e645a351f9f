from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from saddle.cli import (
    EXIT_ARTIFACT,
    EXIT_CONFIG,
    EXIT_NUMERIC,
    EXIT_OK,
    exit_code,
    main,
)
from saddle.exceptions import LoadError, RolloutError

TINY_EX2 = """
[run]
preset = ex2
steps = 2
out = @OUT@

[train]
epochs = 2
inner_steps = 1
batch_size = 16
hidden_layers = 1
width = 4

[evaluate]
resolution = 9
"""

WriteConfig = Callable[[str], Path]


def test_train_writes_artifacts(write_config: WriteConfig, tmp_path: Path) -> None:
    """Training leaves weights, trace, certificate and config snapshot behind."""
    path = write_config(TINY_EX2)
    assert main(["train", "--config", str(path)]) == EXIT_OK
    out = tmp_path / "out"
    weights = sorted(p.name for p in (out / "weights").iterdir())
    assert weights == ["alpha_0.w", "alpha_1.w", "b_0.w", "b_1.w"]
    assert (out / "trace.csv").read_text(encoding="utf-8").count("\n") == 3
    assert (out / "tables" / "certificate.csv").exists()
    snapshot = (out / "config.ini").read_text(encoding="utf-8")
    assert "epochs = 2" in snapshot


def test_training_is_reproducible(write_config: WriteConfig, tmp_path: Path) -> None:
    """Same config and seed give byte-identical weight files."""
    path = write_config(TINY_EX2)
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["train", "--config", str(path), "--out", str(first)]) == EXIT_OK
    assert main(["train", "--config", str(path), "--out", str(second)]) == EXIT_OK
    for weight in (first / "weights").iterdir():
        assert weight.read_bytes() == (second / "weights" / weight.name).read_bytes()


def test_evaluate_after_train(write_config: WriteConfig, tmp_path: Path) -> None:
    """Evaluation writes the value grids and the error report."""
    path = write_config(TINY_EX2)
    assert main(["train", "--config", str(path)]) == EXIT_OK
    assert main(["evaluate", "--config", str(path)]) == EXIT_OK
    out = tmp_path / "out"
    values = np.loadtxt(out / "grids" / "value.csv", delimiter=",")
    assert values.shape == (9, 9)
    assert (out / "grids" / "value_sign.csv").exists()
    report = (out / "tables" / "error_report.csv").read_text(encoding="utf-8")
    assert report.startswith("local_l1,")


def test_evaluate_without_weights(write_config: WriteConfig) -> None:
    """Missing weight files are an artifact error."""
    path = write_config(TINY_EX2)
    assert main(["evaluate", "--config", str(path)]) == EXIT_ARTIFACT


def test_invalid_mode(write_config: WriteConfig) -> None:
    """Unknown modes are configuration errors."""
    path = write_config("[run]\nmode = sideways\nout = @OUT@\n")
    assert main(["train", "--config", str(path)]) == EXIT_CONFIG


def test_missing_config_file(tmp_path: Path) -> None:
    """A config path that does not exist is a configuration error."""
    assert main(["train", "--config", str(tmp_path / "absent.ini")]) == EXIT_CONFIG


def test_oracle_enumeration(write_config: WriteConfig, tmp_path: Path) -> None:
    """The enumeration oracle writes one row per instance."""
    path = write_config(
        "[run]\nout = @OUT@\n\n[oracle]\nkind = theorem1\ninstances = 2\n"
    )
    assert main(["oracle", "--config", str(path)]) == EXIT_OK
    table = tmp_path / "out" / "tables" / "theorem1.csv"
    lines = table.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "instance,strategies,alternating,feedback,open_loop,max_gap"
    assert len(lines) == 3


def test_oracle_without_closed_form(write_config: WriteConfig) -> None:
    """Asking for the closed form of a preset without one is rejected."""
    path = write_config(
        "[run]\npreset = ex4\nout = @OUT@\n\n[oracle]\nkind = analytic\n"
    )
    assert main(["oracle", "--config", str(path)]) == EXIT_CONFIG


def test_oracle_analytic_grid(write_config: WriteConfig, tmp_path: Path) -> None:
    """The closed form is written on the requested grid."""
    path = write_config(
        "[run]\npreset = ex2\nout = @OUT@\n\n"
        "[oracle]\nkind = analytic\nresolution = 5\n"
    )
    assert main(["oracle", "--config", str(path)]) == EXIT_OK
    grid = np.loadtxt(tmp_path / "out" / "grids" / "analytic_v0.csv", delimiter=",")
    assert grid.shape == (5, 5)


def test_bench_needs_steps(write_config: WriteConfig) -> None:
    """An empty N list is a configuration error."""
    path = write_config("[run]\nout = @OUT@\n\n[bench]\nkind = ex2-table\nsteps =\n")
    assert main(["bench", "--config", str(path)]) == EXIT_CONFIG


def test_unknown_command() -> None:
    """argparse rejects unknown subcommands."""
    with pytest.raises(SystemExit):
        main(["deploy"])


def test_exit_codes() -> None:
    """Library errors map onto their exit statuses."""
    assert exit_code(LoadError("gone")) == EXIT_ARTIFACT
    assert exit_code(RolloutError("blew up", 3)) == EXIT_NUMERIC
