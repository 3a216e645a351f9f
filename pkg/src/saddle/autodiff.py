"""Autodiff module. Reverse-mode differentiation over a replayable tape.

Values are numpy arrays of any shape; rows are usually batch samples. The
module-level operations (``add``, ``tanh``, ``maximum``, ...) dispatch on their
arguments: with at least one ``Var`` they record a node on that variable's
tape, with plain arrays they just compute the numpy result. Benchmark
dynamics and costs are written once against these functions and run both
ways.

Subgradient conventions at kinks: relu'(0) = 0, ties of maximum/minimum and
of axis maxima go to the first argument (lowest index), clamp has zero
derivative on its boundary, sqrt has zero derivative at 0.
"""

import logging
from dataclasses import dataclass, field
from enum import StrEnum
from typing import Any, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .const import TANH_RATIO_SERIES_RADIUS
from .exceptions import ConfigurationError

logger = logging.getLogger(__name__)

Array = NDArray[np.float64]


class OpKind(StrEnum):
    """Primitive operations recorded on a tape."""

    INPUT = "input"
    CONSTANT = "constant"
    ADD = "add"
    SUB = "sub"
    MUL = "mul"
    DIV = "div"
    NEG = "neg"
    MATMUL = "matmul"
    TRANSPOSE = "transpose"
    SUM = "sum"
    SUM_TO = "sum_to"
    BROADCAST = "broadcast"
    UNARY = "unary"
    MAXIMUM = "maximum"
    MINIMUM = "minimum"
    CLAMP = "clamp"
    MAX_REDUCE = "max_reduce"
    CONCAT = "concat"
    COLUMNS = "columns"
    SCATTER = "scatter"
    ARCTAN2 = "arctan2"


# Series switch for the derivatives of tanh(sqrt(s))/sqrt(s), in s
_RATIO_DERIVATIVE_SERIES_S = 1e-3


@dataclass(slots=True)
class Node:
    """One recorded operation: its kind, parent indices and cached primal."""

    kind: OpKind
    parents: tuple[int, ...]
    value: Array
    attrs: dict[str, Any] = field(default_factory=dict)


class Var:
    """Handle to a node of a tape, with arithmetic operators."""

    # numpy must defer to our reflected operators
    __array_ufunc__ = None
    __slots__ = ("tape", "index")

    def __init__(self, tape: "Tape", index: int) -> None:
        self.tape = tape
        self.index = index

    @property
    def node(self) -> Node:
        """The recorded node."""
        return self.tape.nodes[self.index]

    @property
    def value(self) -> Array:
        """The cached primal value."""
        return self.tape.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        """Shape of the primal value."""
        return self.value.shape

    @property
    def T(self) -> "Var":  # pylint: disable=invalid-name
        """Matrix transpose."""
        return transpose(self)  # type: ignore[return-value]

    def __add__(self, other: "Operand") -> "Var":
        return add(self, other)  # type: ignore[return-value]

    def __radd__(self, other: "Operand") -> "Var":
        return add(other, self)  # type: ignore[return-value]

    def __sub__(self, other: "Operand") -> "Var":
        return sub(self, other)  # type: ignore[return-value]

    def __rsub__(self, other: "Operand") -> "Var":
        return sub(other, self)  # type: ignore[return-value]

    def __mul__(self, other: "Operand") -> "Var":
        return mul(self, other)  # type: ignore[return-value]

    def __rmul__(self, other: "Operand") -> "Var":
        return mul(other, self)  # type: ignore[return-value]

    def __truediv__(self, other: "Operand") -> "Var":
        return div(self, other)  # type: ignore[return-value]

    def __rtruediv__(self, other: "Operand") -> "Var":
        return div(other, self)  # type: ignore[return-value]

    def __neg__(self) -> "Var":
        return neg(self)  # type: ignore[return-value]

    def __matmul__(self, other: "Operand") -> "Var":
        return matmul(self, other)  # type: ignore[return-value]

    def __rmatmul__(self, other: "Operand") -> "Var":
        return matmul(other, self)  # type: ignore[return-value]

    def __repr__(self) -> str:
        return f"<Var #{self.index}: {self.node.kind} {self.shape}>"


Operand = Union[Var, Array, float, int]


@dataclass(frozen=True)
class Gradient:
    """Flat vector of partial derivatives, one entry per input coordinate."""

    values: Array
    shapes: tuple[tuple[int, ...], ...]

    def split(self) -> list[Array]:
        """Cut the flat vector back into arrays shaped like the inputs."""
        parts = []
        offset = 0
        for shape in self.shapes:
            size = int(np.prod(shape, dtype=np.int64))
            parts.append(self.values[offset : offset + size].reshape(shape))
            offset += size
        return parts

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of comparing backward against central finite differences.

    Attributes:
        errors: Relative error per checked input coordinate.
        skipped: Coordinates whose perturbation crosses a kink.
        tol: Tolerance the errors are judged against.
    """

    errors: dict[int, float]
    skipped: tuple[int, ...]
    tol: float

    @property
    def failures(self) -> tuple[int, ...]:
        """Coordinates whose relative error exceeds the tolerance."""
        return tuple(i for i, err in self.errors.items() if err > self.tol)

    @property
    def passed(self) -> bool:
        """True when no checked coordinate fails."""
        return not self.failures

    @property
    def max_error(self) -> float:
        """Largest relative error over the checked coordinates."""
        return max(self.errors.values(), default=0.0)


class Tape:
    """Record of a computation, in topological order.

    Nodes are appended as operations run, so parents always precede their
    children. The recorded graph can be replayed on new input values with
    ``forward`` and differentiated with ``backward`` or ``gradient``.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self.input_indices: list[int] = []
        self.output_indices: list[int] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def __repr__(self) -> str:
        return (
            f"<Tape: {len(self.nodes)} nodes, {len(self.input_indices)} inputs, "
            f"{len(self.output_indices)} outputs>"
        )

    def input(self, value: ArrayLike, name: str | None = None) -> Var:
        """Declare an input.

        Args:
            value: Initial value.
            name: Optional label kept in the node attributes.

        Returns:
            The input variable.
        """
        array = np.array(value, dtype=np.float64)
        self.nodes.append(Node(OpKind.INPUT, (), array, {"name": name}))
        self.input_indices.append(len(self.nodes) - 1)
        return Var(self, len(self.nodes) - 1)

    def constant(self, value: ArrayLike) -> Var:
        """Record a constant (no gradient flows into it)."""
        array = np.asarray(value, dtype=np.float64)
        self.nodes.append(Node(OpKind.CONSTANT, (), array))
        return Var(self, len(self.nodes) - 1)

    def lift(self, operand: Operand) -> Var:
        """Return ``operand`` as a variable of this tape."""
        if isinstance(operand, Var):
            if operand.tape is not self:
                raise ConfigurationError("Cannot mix variables from different tapes")
            return operand
        return self.constant(operand)

    def record(
        self, kind: OpKind, operands: Sequence[Operand], attrs: dict[str, Any]
    ) -> Var:
        """Evaluate an operation and append it to the tape."""
        parents = tuple(self.lift(operand).index for operand in operands)
        value = _evaluate(kind, [self.nodes[p].value for p in parents], attrs)
        self.nodes.append(Node(kind, parents, value, attrs))
        return Var(self, len(self.nodes) - 1)

    def mark_output(self, *outputs: Var) -> None:
        """Declare which variables ``forward``/``backward`` treat as outputs."""
        for output in outputs:
            self.output_indices.append(self.lift(output).index)

    @property
    def input_shapes(self) -> tuple[tuple[int, ...], ...]:
        """Shapes of the declared inputs, in declaration order."""
        return tuple(self.nodes[i].value.shape for i in self.input_indices)

    @property
    def input_size(self) -> int:
        """Total number of scalar input coordinates."""
        return sum(self.nodes[i].value.size for i in self.input_indices)

    def input_vector(self) -> Array:
        """Current input values concatenated into one flat vector."""
        if not self.input_indices:
            return np.zeros(0)
        return np.concatenate([self.nodes[i].value.ravel() for i in self.input_indices])

    def forward(self, inputs: ArrayLike) -> Array:
        """Replay the graph on new input values.

        Args:
            inputs: Flat vector holding every input coordinate.

        Returns:
            The outputs concatenated into one flat vector.

        Raises:
            ConfigurationError: If the vector length does not match the inputs
                or no output has been marked.
        """
        flat = np.asarray(inputs, dtype=np.float64).ravel()
        if flat.size != self.input_size:
            raise ConfigurationError(
                f"Expected {self.input_size} input values, got {flat.size}"
            )
        if not self.output_indices:
            raise ConfigurationError("Tape has no marked outputs")

        offset = 0
        for index in self.input_indices:
            node = self.nodes[index]
            size = node.value.size
            node.value = flat[offset : offset + size].reshape(node.value.shape).copy()
            offset += size

        for node in self.nodes:
            if node.kind in (OpKind.INPUT, OpKind.CONSTANT):
                continue
            node.value = _evaluate(
                node.kind, [self.nodes[p].value for p in node.parents], node.attrs
            )
        return self.output_vector()

    def output_vector(self) -> Array:
        """Current output values concatenated into one flat vector."""
        return np.concatenate(
            [self.nodes[i].value.ravel() for i in self.output_indices]
        )

    def backward(self, seed: ArrayLike | None = None) -> Gradient:
        """Accumulate adjoints from the marked outputs back to the inputs.

        Args:
            seed: Flat adjoint vector for the outputs (ones when omitted).

        Returns:
            Gradient of ``seed . outputs`` with respect to every input.
        """
        if not self.output_indices:
            raise ConfigurationError("Tape has no marked outputs")
        sizes = [self.nodes[i].value.size for i in self.output_indices]
        flat_seed = (
            np.ones(sum(sizes))
            if seed is None
            else np.asarray(seed, dtype=np.float64).ravel()
        )
        if flat_seed.size != sum(sizes):
            raise ConfigurationError(
                f"Expected a seed of length {sum(sizes)}, got {flat_seed.size}"
            )

        start: dict[int, Operand] = {}
        offset = 0
        for index, size in zip(self.output_indices, sizes):
            shape = self.nodes[index].value.shape
            part = flat_seed[offset : offset + size].reshape(shape)
            offset += size
            if index in start:
                part = start[index] + part  # type: ignore[operator]
            start[index] = part
        adjoints = self._accumulate(start, self.input_indices, create_graph=False)

        pieces = []
        for index in self.input_indices:
            adjoint = adjoints.get(index)
            value = self.nodes[index].value
            pieces.append(
                np.zeros(value.size)
                if adjoint is None
                else np.broadcast_to(np.asarray(adjoint), value.shape).ravel()
            )
        values = np.concatenate(pieces) if pieces else np.zeros(0)
        return Gradient(values, self.input_shapes)

    def gradient(
        self,
        output: Var,
        wrt: Sequence[Var],
        seed: ArrayLike | None = None,
        create_graph: bool = False,
    ) -> list[Any]:
        """Adjoints of ``output`` with respect to chosen variables.

        Args:
            output: Variable to differentiate.
            wrt: Variables to return adjoints for.
            seed: Adjoint of ``output`` (ones when omitted).
            create_graph: Record the adjoint computation on this tape so the
                returned gradients are variables that can be differentiated
                again.

        Returns:
            One adjoint per entry of ``wrt``; arrays, or variables when
            ``create_graph`` is set.
        """
        start_value = (
            np.ones_like(output.value)
            if seed is None
            else np.asarray(seed, dtype=np.float64).reshape(output.shape)
        )
        start: dict[int, Operand] = {
            output.index: self.constant(start_value) if create_graph else start_value
        }
        adjoints = self._accumulate(
            start, [var.index for var in wrt], create_graph=create_graph
        )

        results: list[Any] = []
        for var in wrt:
            adjoint = adjoints.get(var.index)
            if adjoint is None:
                zeros = np.zeros_like(var.value)
                results.append(self.constant(zeros) if create_graph else zeros)
            else:
                results.append(adjoint)
        return results

    def _reaching(self, targets: set[int], floor: int, top: int) -> set[int]:
        """Indices in floor..top with a path down to one of ``targets``."""
        reaching: set[int] = set()
        for index in range(floor, top + 1):
            if index in targets or any(
                p in reaching for p in self.nodes[index].parents
            ):
                reaching.add(index)
        return reaching

    def _accumulate(
        self,
        start: dict[int, Operand],
        targets: Sequence[int],
        create_graph: bool,
    ) -> dict[int, Operand]:
        adjoints: dict[int, Operand] = dict(start)
        top = max(start)
        floor = min(targets, default=top + 1)
        # only nodes between the targets and the start can carry their adjoints
        reaching = self._reaching(set(targets), floor, top)
        for index in range(top, floor - 1, -1):
            adjoint = adjoints.get(index)
            if adjoint is None or index not in reaching:
                continue
            node = self.nodes[index]
            if node.kind in (OpKind.INPUT, OpKind.CONSTANT):
                continue

            primals = [self.nodes[p].value for p in node.parents]
            if create_graph:
                args: list[Operand] = [Var(self, p) for p in node.parents]
                out: Operand = Var(self, index)
            else:
                args = list(primals)
                out = node.value

            contributions = _vjp(node, adjoint, args, out, primals)
            for parent, contribution in zip(node.parents, contributions):
                if contribution is None or parent not in reaching:
                    continue
                previous = adjoints.get(parent)
                adjoints[parent] = (
                    contribution if previous is None else add(previous, contribution)
                )
        return adjoints

    def branch_masks(self) -> list[Array]:
        """Branch selections of every nonsmooth node at the current primals."""
        masks = []
        for node in self.nodes:
            primals = [self.nodes[p].value for p in node.parents]
            if node.kind == OpKind.UNARY and node.attrs["fn"] in _KINKED_UNARY:
                masks.append(primals[0] > 0)
                if node.attrs["fn"] == "abs":
                    masks.append(primals[0] < 0)
            elif node.kind == OpKind.MAXIMUM:
                masks.append(primals[0] >= primals[1])
            elif node.kind == OpKind.MINIMUM:
                masks.append(primals[0] <= primals[1])
            elif node.kind == OpKind.CLAMP:
                masks.append(_clamp_mask(primals[0], node.attrs))
            elif node.kind == OpKind.MAX_REDUCE:
                masks.append(_argmax_mask(primals[0], node.attrs["axis"]))
        return masks


def forward(tape: Tape, inputs: ArrayLike) -> Array:
    """Replay ``tape`` on ``inputs`` and return its flat outputs."""
    return tape.forward(inputs)


def backward(tape: Tape, seed: ArrayLike | None = None) -> Gradient:
    """Reverse accumulation from the marked outputs of ``tape``."""
    return tape.backward(seed)


def grad_check(
    tape: Tape,
    inputs: ArrayLike,
    h: float = 1e-6,
    tol: float = 1e-4,
    coordinates: Sequence[int] | None = None,
    floor: float = 1e-4,
) -> GradCheckReport:
    """Compare backward against central finite differences.

    The scalar under test is the sum of the marked outputs. A coordinate is
    skipped when moving it by 10*h in either direction changes the branch
    taken by any relu, abs, sqrt, maximum, minimum, clamp or axis-maximum
    node.

    Args:
        tape: Recorded graph with marked outputs.
        inputs: Flat input vector to check at.
        h: Finite-difference step.
        tol: Largest accepted relative error.
        coordinates: Input coordinates to check (all when omitted).
        floor: Lower bound on the relative-error denominator.

    Returns:
        Per-coordinate errors and the skipped coordinates.
    """
    point = np.asarray(inputs, dtype=np.float64).ravel().copy()
    tape.forward(point)
    analytic = tape.backward().values
    indices = range(point.size) if coordinates is None else coordinates

    errors: dict[int, float] = {}
    skipped: list[int] = []
    for j in indices:
        shifted = point.copy()
        shifted[j] = point[j] + 10 * h
        tape.forward(shifted)
        upper_masks = tape.branch_masks()
        shifted[j] = point[j] - 10 * h
        tape.forward(shifted)
        lower_masks = tape.branch_masks()
        if any(
            not np.array_equal(upper, lower)
            for upper, lower in zip(upper_masks, lower_masks)
        ):
            skipped.append(int(j))
            continue

        shifted[j] = point[j] + h
        f_plus = float(np.sum(tape.forward(shifted)))
        shifted[j] = point[j] - h
        f_minus = float(np.sum(tape.forward(shifted)))
        numeric = (f_plus - f_minus) / (2 * h)
        denominator = max(abs(numeric), abs(analytic[j]), floor)
        errors[int(j)] = abs(numeric - analytic[j]) / denominator

    tape.forward(point)
    report = GradCheckReport(errors, tuple(skipped), tol)
    if not report.passed:
        logger.warning(
            "Gradient check failed on %d coordinates (max error %.3e)",
            len(report.failures),
            report.max_error,
        )
    return report


# ---------------------------------------------------------------------------
# Dispatching operations
# ---------------------------------------------------------------------------


def _find_tape(operands: Sequence[Any]) -> Tape | None:
    for operand in operands:
        if isinstance(operand, Var):
            return operand.tape
    return None


def _apply(kind: OpKind, operands: Sequence[Operand], **attrs: Any) -> Operand:
    tape = _find_tape(operands)
    if tape is None:
        return _evaluate(
            kind, [np.asarray(operand, dtype=np.float64) for operand in operands], attrs
        )
    return tape.record(kind, operands, attrs)


def shape_of(operand: Operand) -> tuple[int, ...]:
    """Shape of a variable or array."""
    if isinstance(operand, Var):
        return operand.shape
    return np.shape(operand)


def value_of(operand: Operand) -> Array:
    """Primal value of a variable, or the array itself."""
    if isinstance(operand, Var):
        return operand.value
    return np.asarray(operand, dtype=np.float64)


def add(a: Operand, b: Operand) -> Operand:
    """Elementwise sum with broadcasting."""
    return _apply(OpKind.ADD, (a, b))


def sub(a: Operand, b: Operand) -> Operand:
    """Elementwise difference with broadcasting."""
    return _apply(OpKind.SUB, (a, b))


def mul(a: Operand, b: Operand) -> Operand:
    """Elementwise product with broadcasting."""
    return _apply(OpKind.MUL, (a, b))


def div(a: Operand, b: Operand) -> Operand:
    """Elementwise quotient with broadcasting."""
    return _apply(OpKind.DIV, (a, b))


def neg(a: Operand) -> Operand:
    """Elementwise negation."""
    return _apply(OpKind.NEG, (a,))


def matmul(a: Operand, b: Operand) -> Operand:
    """Matrix product of two 2-D operands."""
    return _apply(OpKind.MATMUL, (a, b))


def transpose(a: Operand) -> Operand:
    """Transpose of a 2-D operand."""
    return _apply(OpKind.TRANSPOSE, (a,))


def reduce_sum(a: Operand, axis: int | None = None) -> Operand:
    """Sum over one axis (kept with length 1) or over everything (scalar)."""
    return _apply(OpKind.SUM, (a,), axis=axis)


def mean(a: Operand) -> Operand:
    """Mean over every entry, as a scalar."""
    size = int(np.prod(shape_of(a), dtype=np.int64))
    return mul(reduce_sum(a), 1.0 / size)


def sum_to(a: Operand, shape: tuple[int, ...]) -> Operand:
    """Sum away broadcast dimensions so the result has ``shape``."""
    if shape_of(a) == tuple(shape):
        return a
    return _apply(OpKind.SUM_TO, (a,), shape=tuple(shape))


def broadcast_to(a: Operand, shape: tuple[int, ...]) -> Operand:
    """Broadcast to ``shape``."""
    if shape_of(a) == tuple(shape):
        return a
    return _apply(OpKind.BROADCAST, (a,), shape=tuple(shape))


def unary(fn: str, a: Operand, order: int = 0) -> Operand:
    """Elementwise scalar function, or its derivative of the given order."""
    if fn not in _UNARY_FUNCTIONS:
        raise ConfigurationError(f"Unknown elementwise function: {fn}")
    return _apply(OpKind.UNARY, (a,), fn=fn, order=order)


def tanh(a: Operand) -> Operand:
    """Elementwise hyperbolic tangent."""
    return unary("tanh", a)


def relu(a: Operand) -> Operand:
    """Elementwise max(a, 0)."""
    return unary("relu", a)


def absolute(a: Operand) -> Operand:
    """Elementwise absolute value."""
    return unary("abs", a)


def sqrt(a: Operand) -> Operand:
    """Elementwise square root of a non-negative operand."""
    return unary("sqrt", a)


def tanh_ratio_sq(a: Operand) -> Operand:
    """Elementwise tanh(sqrt(s))/sqrt(s), equal to 1 at s = 0."""
    return unary("tanh_ratio_sq", a)


def sin(a: Operand) -> Operand:
    """Elementwise sine."""
    return unary("sin", a)


def cos(a: Operand) -> Operand:
    """Elementwise cosine."""
    return unary("cos", a)


def arctan2(y: Operand, x: Operand) -> Operand:
    """Elementwise angle of (x, y) in (-pi, pi]."""
    return _apply(OpKind.ARCTAN2, (y, x))


def maximum(a: Operand, b: Operand) -> Operand:
    """Elementwise maximum; ties select ``a``."""
    return _apply(OpKind.MAXIMUM, (a, b))


def minimum(a: Operand, b: Operand) -> Operand:
    """Elementwise minimum; ties select ``a``."""
    return _apply(OpKind.MINIMUM, (a, b))


def clamp(a: Operand, low: float, high: float) -> Operand:
    """Elementwise clip to [low, high]."""
    if low > high:
        raise ConfigurationError(f"Empty clamp interval [{low}, {high}]")
    return _apply(OpKind.CLAMP, (a,), low=float(low), high=float(high))


def max_reduce(a: Operand, axis: int = -1) -> Operand:
    """Maximum along ``axis``, kept with length 1; ties select the first."""
    return _apply(OpKind.MAX_REDUCE, (a,), axis=axis)


def concat(parts: Sequence[Operand]) -> Operand:
    """Concatenate along the last axis."""
    return _apply(OpKind.CONCAT, tuple(parts))


def columns(a: Operand, start: int, stop: int) -> Operand:
    """Slice ``a[..., start:stop]``."""
    return _apply(OpKind.COLUMNS, (a,), start=start, stop=stop)


def column(a: Operand, index: int) -> Operand:
    """Column ``index`` of a 2-D operand, kept as a (rows, 1) block."""
    return columns(a, index, index + 1)


def scatter(a: Operand, start: int, width: int) -> Operand:
    """Place ``a`` at columns ``start:`` of a zero block ``width`` wide."""
    return _apply(OpKind.SCATTER, (a,), start=start, width=width)


def dot(a: Operand, b: Operand) -> Operand:
    """Row-wise inner product, kept as a (rows, 1) block."""
    return reduce_sum(mul(a, b), axis=-1)


def affine(x: Operand, weight: Operand, bias: Operand) -> Operand:
    """Row-wise ``W x + b`` for a batch ``x`` of shape (rows, fan_in)."""
    return add(matmul(x, transpose(weight)), bias)


def norm2(a: Operand) -> Operand:
    """Row-wise Euclidean norm, kept as a (rows, 1) block."""
    return sqrt(reduce_sum(mul(a, a), axis=-1))


def unit_ball(a: Operand) -> Operand:
    """Row-wise x/|x| * tanh(|x|), mapping onto the open unit ball."""
    return mul(a, tanh_ratio_sq(reduce_sum(mul(a, a), axis=-1)))


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

_UNARY_FUNCTIONS = ("tanh", "relu", "abs", "sqrt", "tanh_ratio_sq", "sin", "cos")
_KINKED_UNARY = ("relu", "abs", "sqrt")


def _sum_to(value: Array, shape: tuple[int, ...]) -> Array:
    result = value
    while result.ndim > len(shape):
        result = result.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and result.shape[axis] != 1:
            result = result.sum(axis=axis, keepdims=True)
    return result


def _tanh_ratio_derivative(s: Array, order: int) -> Array:
    """Derivatives in s of k(s) = tanh(sqrt(s))/sqrt(s)."""
    if order == 0:
        safe = np.maximum(s, TANH_RATIO_SERIES_RADIUS**2)
        r = np.sqrt(safe)
        closed = np.tanh(r) / r
        series = 1.0 - s / 3.0 + 2.0 * s**2 / 15.0
        return np.where(s < TANH_RATIO_SERIES_RADIUS**2, series, closed)

    safe = np.maximum(s, _RATIO_DERIVATIVE_SERIES_S)
    r = np.sqrt(safe)
    t = np.tanh(r)
    sech2 = 1.0 - t * t
    first_r = (r * sech2 - t) / r**2
    if order == 1:
        closed = first_r / (2.0 * r)
        series = -1.0 / 3.0 + 4.0 * s / 15.0 - 51.0 * s**2 / 315.0
    elif order == 2:
        second_r = (-2.0 * r**2 * sech2 * t - 2.0 * r * sech2 + 2.0 * t) / r**3
        closed = (r * second_r - first_r) / (4.0 * r**3)
        series = 4.0 / 15.0 - 102.0 * s / 315.0 + 744.0 * s**2 / 2835.0
    else:
        raise ConfigurationError("tanh_ratio_sq is differentiable twice at most")
    return np.where(s < _RATIO_DERIVATIVE_SERIES_S, series, closed)


def _unary_value(fn: str, order: int, x: Array) -> Array:
    if fn == "tanh":
        t = np.tanh(x)
        if order == 0:
            return t
        sech2 = 1.0 - t * t
        if order == 1:
            return sech2
        if order == 2:
            return -2.0 * t * sech2
        if order == 3:
            return -2.0 * sech2 * (1.0 - 3.0 * t * t)
        raise ConfigurationError("tanh is differentiable three times at most")
    if fn == "relu":
        if order == 0:
            return np.maximum(x, 0.0)
        if order == 1:
            return (x > 0).astype(np.float64)
        return np.zeros_like(x)
    if fn == "abs":
        if order == 0:
            return np.abs(x)
        if order == 1:
            return np.sign(x)
        return np.zeros_like(x)
    if fn == "sqrt":
        if order == 0:
            return np.sqrt(x)
        positive = x > 0
        safe = np.where(positive, x, 1.0)
        exponent = 0.5 - order
        coefficient = float(np.prod([0.5 - k for k in range(order)]))
        return np.where(positive, coefficient * safe**exponent, 0.0)
    if fn == "sin":
        return np.sin(x + order * np.pi / 2)
    if fn == "cos":
        return np.cos(x + order * np.pi / 2)
    return _tanh_ratio_derivative(x, order)


def _clamp_mask(x: Array, attrs: dict[str, Any]) -> Array:
    return (x > attrs["low"]) & (x < attrs["high"])


def _argmax_mask(x: Array, axis: int) -> Array:
    mask = np.zeros_like(x)
    winners = np.expand_dims(np.argmax(x, axis=axis), axis)
    np.put_along_axis(mask, winners, 1.0, axis=axis)
    return mask


def _evaluate(kind: OpKind, values: list[Array], attrs: dict[str, Any]) -> Array:
    if kind == OpKind.ADD:
        return values[0] + values[1]
    if kind == OpKind.SUB:
        return values[0] - values[1]
    if kind == OpKind.MUL:
        return values[0] * values[1]
    if kind == OpKind.DIV:
        return values[0] / values[1]
    if kind == OpKind.NEG:
        return -values[0]
    if kind == OpKind.MATMUL:
        return values[0] @ values[1]
    if kind == OpKind.TRANSPOSE:
        return np.ascontiguousarray(values[0].T)
    if kind == OpKind.SUM:
        axis = attrs["axis"]
        if axis is None:
            return np.asarray(values[0].sum())
        return values[0].sum(axis=axis, keepdims=True)
    if kind == OpKind.SUM_TO:
        return _sum_to(values[0], attrs["shape"])
    if kind == OpKind.BROADCAST:
        return np.array(np.broadcast_to(values[0], attrs["shape"]))
    if kind == OpKind.UNARY:
        return _unary_value(attrs["fn"], attrs["order"], values[0])
    if kind == OpKind.MAXIMUM:
        return np.maximum(values[0], values[1])
    if kind == OpKind.MINIMUM:
        return np.minimum(values[0], values[1])
    if kind == OpKind.CLAMP:
        return np.clip(values[0], attrs["low"], attrs["high"])
    if kind == OpKind.MAX_REDUCE:
        return values[0].max(axis=attrs["axis"], keepdims=True)
    if kind == OpKind.CONCAT:
        return np.concatenate(values, axis=-1)
    if kind == OpKind.COLUMNS:
        return values[0][..., attrs["start"] : attrs["stop"]].copy()
    if kind == OpKind.SCATTER:
        source = values[0]
        block = np.zeros(source.shape[:-1] + (attrs["width"],))
        block[..., attrs["start"] : attrs["start"] + source.shape[-1]] = source
        return block
    if kind == OpKind.ARCTAN2:
        return np.arctan2(values[0], values[1])
    raise ConfigurationError(f"Cannot evaluate node of kind {kind}")


def _vjp(
    node: Node,
    adjoint: Operand,
    args: list[Operand],
    out: Operand,
    primals: list[Array],
) -> list[Operand | None]:
    """Adjoint contributions of ``node`` to each of its parents."""
    kind = node.kind
    shapes = [p.shape for p in primals]
    if kind == OpKind.ADD:
        return [sum_to(adjoint, shapes[0]), sum_to(adjoint, shapes[1])]
    if kind == OpKind.SUB:
        return [sum_to(adjoint, shapes[0]), neg(sum_to(adjoint, shapes[1]))]
    if kind == OpKind.MUL:
        return [
            sum_to(mul(adjoint, args[1]), shapes[0]),
            sum_to(mul(adjoint, args[0]), shapes[1]),
        ]
    if kind == OpKind.DIV:
        quotient = div(adjoint, args[1])
        return [
            sum_to(quotient, shapes[0]),
            sum_to(neg(mul(quotient, out)), shapes[1]),
        ]
    if kind == OpKind.NEG:
        return [neg(adjoint)]
    if kind == OpKind.MATMUL:
        return [
            matmul(adjoint, transpose(args[1])),
            matmul(transpose(args[0]), adjoint),
        ]
    if kind == OpKind.TRANSPOSE:
        return [transpose(adjoint)]
    if kind in (OpKind.SUM, OpKind.SUM_TO):
        return [broadcast_to(adjoint, shapes[0])]
    if kind == OpKind.BROADCAST:
        return [sum_to(adjoint, shapes[0])]
    if kind == OpKind.UNARY:
        fn, order = node.attrs["fn"], node.attrs["order"]
        return [mul(adjoint, unary(fn, args[0], order + 1))]
    if kind in (OpKind.MAXIMUM, OpKind.MINIMUM):
        if kind == OpKind.MAXIMUM:
            first = primals[0] >= primals[1]
        else:
            first = primals[0] <= primals[1]
        first_mask = np.broadcast_to(first, node.value.shape).astype(np.float64)
        return [
            sum_to(mul(adjoint, first_mask), shapes[0]),
            sum_to(mul(adjoint, 1.0 - first_mask), shapes[1]),
        ]
    if kind == OpKind.CLAMP:
        return [mul(adjoint, _clamp_mask(primals[0], node.attrs).astype(np.float64))]
    if kind == OpKind.MAX_REDUCE:
        return [mul(adjoint, _argmax_mask(primals[0], node.attrs["axis"]))]
    if kind == OpKind.CONCAT:
        pieces: list[Operand | None] = []
        offset = 0
        for shape in shapes:
            pieces.append(columns(adjoint, offset, offset + shape[-1]))
            offset += shape[-1]
        return pieces
    if kind == OpKind.COLUMNS:
        return [scatter(adjoint, node.attrs["start"], shapes[0][-1])]
    if kind == OpKind.SCATTER:
        start = node.attrs["start"]
        return [columns(adjoint, start, start + shapes[0][-1])]
    if kind == OpKind.ARCTAN2:
        scaled = div(adjoint, add(mul(args[0], args[0]), mul(args[1], args[1])))
        return [
            sum_to(mul(scaled, args[1]), shapes[0]),
            sum_to(neg(mul(scaled, args[0])), shapes[1]),
        ]
    raise ConfigurationError(f"No adjoint rule for node of kind {kind}")
