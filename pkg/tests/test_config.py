from pathlib import Path
from typing import Callable

import pytest

from saddle.config import MinMaxConfig, RunConfig
from saddle.exceptions import ConfigurationError

EXAMPLE = """
# ex2, local scheme
[run]
preset = ex2
mode = local
steps = 8
seed = 3

[train]
algorithm = poteb
epochs = 20   # short run
inner_steps = 4

[bench]
steps = 2, 4, 8
algorithms = sgda, pote
"""


def test_parse_sections() -> None:
    """Sections map onto their models; lists are comma separated."""
    config = RunConfig.from_text(EXAMPLE)
    assert config.run.preset == "ex2"
    assert config.run.mode == "local"
    assert config.run.steps == 8
    assert config.train.algorithm == "poteb"
    assert config.train.epochs == 20
    assert config.bench.steps == [2, 4, 8]
    assert config.bench.algorithms == ["sgda", "pote"]
    assert config.oracle.kind == "dpp"


def test_defaults() -> None:
    """An empty file is a valid configuration."""
    config = RunConfig.from_text("")
    assert config.run.mode == "global"
    assert config.train == MinMaxConfig()
    assert config.train.algorithm == "pote"


def test_written_text_parses_back() -> None:
    """to_text renders a file that reads back to the same settings."""
    config = RunConfig.from_text(EXAMPLE)
    parsed = RunConfig.from_text(config.to_text())
    assert parsed.model_dump() == config.model_dump()


@pytest.mark.parametrize(
    "text",
    [
        "[runner]\npreset = ex2\n",
        "[run]\ncolour = blue\n",
        "[run]\nmode = sideways\n",
        "[train]\nepochs = -1\n",
        "[train]\nalgorithm = poteb\ninner_steps = 51\n",
        "[run]\npreset = ex2\npreset = ex1\n",
        "preset = ex2\n",
    ],
)
def test_invalid_text(text: str) -> None:
    """Unknown names, bad values and malformed files are configuration errors."""
    with pytest.raises(ConfigurationError):
        RunConfig.from_text(text)


def test_missing_file(tmp_path: Path) -> None:
    """Reading a missing file is a configuration error."""
    with pytest.raises(ConfigurationError):
        RunConfig.from_file(tmp_path / "absent.ini")


def test_from_file(write_config: Callable[[str], Path]) -> None:
    """Files are read as UTF-8 text."""
    path = write_config("[run]\npreset = separable\nout = @OUT@\n")
    config = RunConfig.from_file(path)
    assert config.run.preset == "separable"
    assert config.run.out.endswith("out")


def test_run_overrides_keep_unset_sections() -> None:
    """Overriding [run] keys neither sets nor changes the other sections."""
    config = RunConfig.from_text("[run]\npreset = ex1\n")
    changed = config.with_run(seed=7, workers=2)
    assert changed.run.seed == 7
    assert changed.run.workers == 2
    assert changed.run.preset == "ex1"
    assert "train" not in changed.model_fields_set
    explicit = RunConfig.from_text("[train]\nepochs = 3\n").with_run(seed=1)
    assert "train" in explicit.model_fields_set
    assert explicit.train.epochs == 3


def test_overrides_are_validated() -> None:
    """Overrides go through the same validation as file values."""
    with pytest.raises(ConfigurationError):
        RunConfig.from_text("").with_run(workers=0)
