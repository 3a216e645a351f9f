"""Config module. Validated run configuration and its INI-style text form.

A config file has one section per model below::

    # ex2, global scheme
    [run]
    preset = ex2
    mode = global
    steps = 4

    [train]
    epochs = 500
    inner_steps = 5

Keys are ``key = value``; ``#`` starts a comment; lists are comma separated.
Unknown sections and unknown keys are rejected.
"""

import configparser
import logging
from pathlib import Path
from typing import Annotated, Any, Literal

from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    ValidationError,
    model_validator,
)

from .const import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    DEFAULT_CONTROL_POINTS,
    DEFAULT_ETA_LOC,
    DEFAULT_RESOLUTION,
    MAX_UNROLLED_STEPS,
    ROTATION_SUCCESS_THRESHOLD,
    SG_RATE_FLOOR,
)
from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)

AlgorithmKind = Literal["sgda", "agda", "gamma-gda", "pote", "poteb"]
OptimizerKind = Literal["adam", "sg-linear-decay"]
ALGORITHMS: tuple[str, ...] = ("sgda", "agda", "gamma-gda", "pote", "poteb")


def _split_list(value: Any) -> Any:
    if isinstance(value, str):
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


FloatList = Annotated[list[float], BeforeValidator(_split_list)]
IntList = Annotated[list[int], BeforeValidator(_split_list)]
AlgorithmList = Annotated[list[AlgorithmKind], BeforeValidator(_split_list)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class MinMaxConfig(_Section):
    """Min-max training settings.

    ``epochs`` is M_epoch, ``inner_steps`` is q = M_epoch^pote, ``outer_rate``
    is eta and ``inner_rate`` is rho.
    """

    algorithm: AlgorithmKind = "pote"
    epochs: int = Field(default=500, ge=0)
    inner_steps: int = Field(default=5, ge=1)
    batch_size: int = Field(default=1000, ge=1)
    outer_rate: float = Field(default=2e-3, gt=0)
    inner_rate: float = Field(default=2e-3, gt=0)
    gamma: float = Field(default=2.0, gt=1)
    optimizer: OptimizerKind = "adam"
    adam_beta1: float = Field(default=ADAM_BETA1, ge=0, lt=1)
    adam_beta2: float = Field(default=ADAM_BETA2, ge=0, lt=1)
    adam_eps: float = Field(default=ADAM_EPS, gt=0)
    sg_floor: float = Field(default=SG_RATE_FLOOR, gt=0)
    hidden_layers: int = Field(default=3, ge=1)
    width: int = Field(default=20, ge=1)
    log_every: int = Field(default=50, ge=1)
    certificate_tolerance: float = Field(default=1e-2, gt=0)
    seed: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _check_unrolled_steps(self) -> "MinMaxConfig":
        if self.algorithm == "poteb" and self.inner_steps > MAX_UNROLLED_STEPS:
            raise ValueError(
                f"poteb unrolls at most {MAX_UNROLLED_STEPS} inner steps, "
                f"got {self.inner_steps}"
            )
        return self


class EvaluationConfig(_Section):
    """Value-grid evaluation settings."""

    resolution: int = Field(default=DEFAULT_RESOLUTION, ge=2)
    eta_loc: float = Field(default=DEFAULT_ETA_LOC, gt=0)
    slice_values: FloatList = Field(default_factory=list)
    pair_dir: str | None = None


class OracleConfig(_Section):
    """Oracle subcommand settings."""

    kind: Literal["dpp", "analytic", "theorem1", "rate", "mc"] = "dpp"
    resolution: int = Field(default=201, ge=2)
    control_points: int = Field(default=DEFAULT_CONTROL_POINTS, ge=1)
    rate_steps: IntList = Field(default_factory=lambda: [2, 4, 8, 16])
    reference_steps: int = Field(default=64, ge=1)
    instances: int = Field(default=1, ge=1)
    samples: int = Field(default=10_000, ge=1)


class BenchConfig(_Section):
    """Benchmark sweep settings."""

    kind: Literal["ex2-table", "rotation"] = "ex2-table"
    steps: IntList = Field(default_factory=lambda: [2, 4, 8, 16])
    algorithms: AlgorithmList = Field(default_factory=lambda: list(ALGORITHMS))
    optimizer: OptimizerKind = "adam"
    runs: int = Field(default=10, ge=0)
    success_threshold: float = Field(default=ROTATION_SUCCESS_THRESHOLD, gt=0)


class RunSection(_Section):
    """Top-level run settings."""

    preset: str = "ex2"
    mode: Literal["global", "local", "reversed"] = "global"
    steps: int | None = Field(default=None, ge=1)
    substeps: int | None = Field(default=None, ge=1)
    legacy_dynamics: bool = False
    seed: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1)
    out: str = "runs/default"


class RunConfig(_Section):
    """Everything a CLI invocation needs, one attribute per file section."""

    run: RunSection = Field(default_factory=RunSection)
    train: MinMaxConfig = Field(default_factory=MinMaxConfig)
    evaluate: EvaluationConfig = Field(default_factory=EvaluationConfig)
    oracle: OracleConfig = Field(default_factory=OracleConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)

    @classmethod
    def from_mapping(cls, sections: dict[str, dict[str, Any]]) -> "RunConfig":
        """Validate a section -> key -> value mapping.

        Raises:
            ConfigurationError: On unknown sections or keys, or invalid values.
        """
        unknown = set(sections) - set(cls.model_fields)
        if unknown:
            raise ConfigurationError(f"Unknown config sections: {sorted(unknown)}")
        try:
            return cls.model_validate(sections)
        except ValidationError as exc:
            raise ConfigurationError(f"Invalid configuration: {exc}") from exc

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        """Parse INI-style text."""
        parser = configparser.ConfigParser(
            interpolation=None,
            comment_prefixes=("#",),
            inline_comment_prefixes=("#",),
        )
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"Malformed config: {exc}") from exc
        sections = {name: dict(parser.items(name)) for name in parser.sections()}
        return cls.from_mapping(sections)

    @classmethod
    def from_file(cls, path: Path | str) -> "RunConfig":
        """Parse a config file.

        Raises:
            ConfigurationError: If the file is missing or invalid.
        """
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"Cannot read config {path}: {exc}") from exc
        logger.info("Loaded config %s", path)
        return cls.from_text(text)

    def with_run(self, **changes: Any) -> "RunConfig":
        """Copy with some [run] keys replaced (re-validated).

        Sections absent from the source stay unset in the copy.
        """
        data = self.model_dump(exclude_unset=True)
        data.setdefault("run", {}).update(changes)
        return RunConfig.from_mapping(data)

    def to_text(self) -> str:
        """Render as config text that parses back to an equal model."""
        lines: list[str] = []
        for section in type(self).model_fields:
            lines.append(f"[{section}]")
            for key, value in getattr(self, section).model_dump().items():
                if value is None:
                    continue
                if isinstance(value, list):
                    value = ", ".join(str(item) for item in value)
                lines.append(f"{key} = {value}")
            lines.append("")
        return "\n".join(lines)
