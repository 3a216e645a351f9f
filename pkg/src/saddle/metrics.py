"""Metrics module. Error measures, convergence orders and level-set grids."""

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .autodiff import Array
from .const import DEFAULT_ETA_LOC
from .exceptions import ConfigurationError, MetricError

logger = logging.getLogger(__name__)

ValueFn = Callable[[Array], Array]


def _pair(values: Array, reference: Array) -> tuple[Array, Array]:
    v = np.asarray(values, dtype=np.float64).ravel()
    r = np.asarray(reference, dtype=np.float64).ravel()
    if v.shape != r.shape:
        raise MetricError(f"Value arrays differ in size: {v.size} vs {r.size}")
    if v.size == 0:
        raise MetricError("Cannot measure an error on empty arrays")
    return v, r


def local_l1_error(
    values: Array, reference: Array, eta_loc: float = DEFAULT_ETA_LOC
) -> float:
    """Mean |values - reference| over the band |reference| <= eta_loc.

    Raises:
        MetricError: If no node lies in the band.
    """
    v, r = _pair(values, reference)
    band = np.abs(r) <= eta_loc
    if not band.any():
        raise MetricError(f"No reference value within the band |v| <= {eta_loc}")
    return float(np.mean(np.abs(v[band] - r[band])))


def global_l1_error(values: Array, reference: Array) -> float:
    """Mean |values - reference| over every node."""
    v, r = _pair(values, reference)
    return float(np.mean(np.abs(v - r)))


def sign_grid(values: Array) -> Array:
    """-1 where the value is negative, +1 elsewhere (zero counts as non-negative)."""
    return np.where(np.asarray(values) < 0, -1, 1).astype(np.int8)


def sign_agreement(values: Array, reference: Array) -> float:
    """Fraction of nodes where both arrays have the same sign."""
    v, r = _pair(values, reference)
    return float(np.mean(sign_grid(v) == sign_grid(r)))


def ordering_violation_fraction(
    lower: Array, upper: Array, tolerance: float = 0.05
) -> float:
    """Fraction of nodes where ``lower > upper + tolerance``."""
    low, high = _pair(lower, upper)
    return float(np.mean(low > high + tolerance))


@dataclass(frozen=True)
class ErrorReport:
    """Errors of a value grid against a reference grid."""

    local_l1: float
    global_l1: float
    sign_agreement: float
    eta_loc: float
    resolution: tuple[int, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    @classmethod
    def compare(
        cls,
        values: Array,
        reference: Array,
        box: "Box",
        eta_loc: float = DEFAULT_ETA_LOC,
    ) -> "ErrorReport":
        """Compute every error of ``values`` against ``reference`` on ``box``."""
        return cls(
            local_l1_error(values, reference, eta_loc),
            global_l1_error(values, reference),
            sign_agreement(values, reference),
            eta_loc,
            box.resolution,
            box.lower,
            box.upper,
        )

    def write(self, path: Path | str) -> None:
        """Write the report as ``key,value`` lines."""
        with open(path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            for key, value in asdict(self).items():
                if isinstance(value, tuple):
                    value = " ".join(repr(item) for item in value)
                writer.writerow([key, value if isinstance(value, str) else repr(value)])
        logger.info("Wrote error report to %s", path)


def convergence_order(errors: Sequence[float]) -> list[float]:
    """Orders log2(e_N / e_2N) of errors measured at doubling N.

    Raises:
        MetricError: If an error is not positive.
    """
    values = np.asarray(errors, dtype=np.float64)
    if np.any(~(values > 0)):
        raise MetricError(
            f"Convergence orders need positive errors, got {list(errors)}"
        )
    return [float(np.log2(values[i] / values[i + 1])) for i in range(len(values) - 1)]


def fitted_slope(steps: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(step).

    Raises:
        MetricError: With fewer than two points or a non-positive entry.
    """
    if len(steps) != len(errors) or len(steps) < 2:
        raise MetricError(f"A slope needs at least two points, got {len(errors)}")
    x = np.asarray(steps, dtype=np.float64)
    y = np.asarray(errors, dtype=np.float64)
    if np.any(~(x > 0)) or np.any(~(y > 0)):
        raise MetricError("A log-log slope needs positive steps and errors")
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with a node count per axis."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    resolution: tuple[int, ...]

    def __post_init__(self) -> None:
        if not len(self.lower) == len(self.upper) == len(self.resolution):
            raise ConfigurationError(
                "Box dimensions disagree: "
                f"{self.lower}, {self.upper}, {self.resolution}"
            )
        if any(r < 2 for r in self.resolution):
            raise ConfigurationError(
                f"Need at least 2 nodes per axis, got {self.resolution}"
            )
        if any(lo >= hi for lo, hi in zip(self.lower, self.upper)):
            raise ConfigurationError(f"Empty box {self.lower}..{self.upper}")

    @classmethod
    def cube(
        cls, lower: Sequence[float], upper: Sequence[float], resolution: int
    ) -> "Box":
        """Box with the same resolution on every axis."""
        return cls(
            tuple(float(v) for v in lower),
            tuple(float(v) for v in upper),
            (int(resolution),) * len(lower),
        )

    def enlarged(self, fraction: float) -> "Box":
        """Box grown by ``fraction`` of its width on each side, same resolution."""
        pairs = list(zip(self.lower, self.upper))
        lower = tuple(lo - fraction * (hi - lo) for lo, hi in pairs)
        upper = tuple(hi + fraction * (hi - lo) for lo, hi in pairs)
        return Box(lower, upper, self.resolution)

    @property
    def dim(self) -> int:
        """Number of axes."""
        return len(self.lower)

    @property
    def size(self) -> int:
        """Number of nodes."""
        return int(np.prod(self.resolution))

    def axes(self) -> list[Array]:
        """Node coordinates along each axis."""
        return [
            np.linspace(lo, hi, n)
            for lo, hi, n in zip(self.lower, self.upper, self.resolution)
        ]

    def points(self) -> Array:
        """All nodes, row-major with the last axis fastest, shape (size, dim)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def header(self) -> str:
        """Metadata line describing the box."""
        lower = ",".join(repr(float(v)) for v in self.lower)
        upper = ",".join(repr(float(v)) for v in self.upper)
        return (
            f"lower={lower} upper={upper} "
            f"resolution={','.join(str(r) for r in self.resolution)}"
        )


def write_grid_csv(path: Path | str, box: Box, values: Array, title: str = "") -> None:
    """Write a value grid: box metadata and axis coordinates, then row-major rows.

    Every number is printed with 17 significant digits.
    """
    data = np.asarray(values, dtype=np.float64)
    if data.size != box.size:
        raise ConfigurationError(
            f"{data.size} values do not fill a {box.resolution} grid"
        )
    lines = [box.header()]
    if title:
        lines.insert(0, title)
    for i, axis in enumerate(box.axes()):
        lines.append(f"x{i}=" + ",".join(f"{v:.17g}" for v in axis))
    rows = data.reshape(box.resolution[0], -1) if box.dim > 1 else data.reshape(1, -1)
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header="\n".join(lines))
    logger.info("Wrote grid %s", path)


def write_table_csv(
    path: Path | str, header: Sequence[str], rows: Sequence[Sequence[object]]
) -> None:
    """Write a small result table."""
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    logger.info("Wrote table %s", path)


@dataclass(frozen=True)
class LevelSetGrid:
    """Values of a function on a 2-D grid, possibly a slice of a larger space."""

    box: Box
    values: Array
    fixed: tuple[float, ...] = ()

    @property
    def signs(self) -> Array:
        """Sign grid of ``values``."""
        return sign_grid(self.values)

    @property
    def points(self) -> Array:
        """Full-dimensional evaluation points."""
        return _with_fixed(self.box.points(), self.fixed)

    def write(self, directory: Path | str, name: str) -> tuple[Path, Path]:
        """Write ``<name>.csv`` with values and ``<name>_sign.csv`` with signs."""
        target = Path(directory)
        target.mkdir(parents=True, exist_ok=True)
        title = f"fixed={','.join(repr(v) for v in self.fixed)}" if self.fixed else ""
        value_path = target / f"{name}.csv"
        sign_path = target / f"{name}_sign.csv"
        write_grid_csv(value_path, self.box, self.values, title)
        write_grid_csv(sign_path, self.box, self.signs, title)
        return value_path, sign_path


def _with_fixed(points: Array, fixed: Sequence[float]) -> Array:
    if not fixed:
        return points
    tail = np.broadcast_to(
        np.asarray(fixed, dtype=np.float64), (len(points), len(fixed))
    )
    return np.concatenate([points, tail], axis=1)


def level_set_grid(
    function: ValueFn, box: Box, fixed: Sequence[float] = ()
) -> LevelSetGrid:
    """Evaluate ``function`` on ``box``, appending ``fixed`` trailing coordinates.

    Args:
        function: Maps (rows, d) points to (rows,) values.
        box: Grid over the leading coordinates.
        fixed: Values of the remaining coordinates, e.g. (0, -2) for a slice
            of a 4-D value.

    Returns:
        The values on the grid.
    """
    points = _with_fixed(box.points(), fixed)
    values = np.asarray(function(points), dtype=np.float64).ravel()
    if values.size != box.size:
        raise ConfigurationError(
            f"Value function returned {values.size} values for {box.size} points"
        )
    return LevelSetGrid(box, values, tuple(float(v) for v in fixed))
