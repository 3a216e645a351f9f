"""Network module. Feedforward ReLU networks with a bounded output activation."""

import logging
import struct
from dataclasses import dataclass
from enum import StrEnum
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Array, Operand
from .const import WEIGHTS_MAGIC, WEIGHTS_VERSION
from .exceptions import ConfigurationError, LoadError

logger = logging.getLogger(__name__)

# magic, version, d0, d1, hidden layers, width, activation code
_HEADER = struct.Struct("<4sBIIIIB")


class OutputActivation(StrEnum):
    """Final activation applied after the last affine layer."""

    IDENTITY = "identity"
    TANH = "tanh"
    UNIT_BALL = "unit-ball"


_ACTIVATION_CODES = {
    OutputActivation.IDENTITY: 0,
    OutputActivation.TANH: 1,
    OutputActivation.UNIT_BALL: 2,
}


@dataclass(frozen=True)
class NetworkParams:
    """Weights and biases of an L-hidden-layer ReLU network.

    ``weights[i]`` has shape (fan_out, fan_in) and ``biases[i]`` shape
    (fan_out,), for i = 0..L. Instances are never mutated; optimizers build
    new ones with ``with_parameters``.
    """

    weights: tuple[Array, ...]
    biases: tuple[Array, ...]
    activation: OutputActivation

    @classmethod
    def create(
        cls,
        input_dim: int,
        output_dim: int,
        hidden_layers: int,
        width: int,
        activation: OutputActivation | str,
        seed: int | np.random.SeedSequence,
    ) -> "NetworkParams":
        """Draw a Glorot-uniform network with zero biases.

        Args:
            input_dim: Input dimension d0.
            output_dim: Output dimension d1.
            hidden_layers: Number L of hidden layers.
            width: Neurons m per hidden layer.
            activation: Output activation kind.
            seed: Seed of the generator drawing the weights.

        Returns:
            The initialized network.

        Raises:
            ConfigurationError: If a dimension is below 1.
        """
        if min(input_dim, output_dim, hidden_layers, width) < 1:
            raise ConfigurationError(
                f"Invalid network dims ({input_dim}, {output_dim}, "
                f"{hidden_layers}, {width})"
            )
        rng = np.random.default_rng(seed)
        sizes = [input_dim] + [width] * hidden_layers + [output_dim]
        weights = []
        biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(tuple(weights), tuple(biases), OutputActivation(activation))

    @property
    def input_dim(self) -> int:
        """Input dimension d0."""
        return int(self.weights[0].shape[1])

    @property
    def output_dim(self) -> int:
        """Output dimension d1."""
        return int(self.weights[-1].shape[0])

    @property
    def hidden_layers(self) -> int:
        """Number L of hidden layers."""
        return len(self.weights) - 1

    @property
    def width(self) -> int:
        """Neurons per hidden layer."""
        return int(self.weights[0].shape[0])

    @property
    def parameter_count(self) -> int:
        """Total number of scalar parameters."""
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def parameters(self) -> list[Array]:
        """Parameters in layer order: W_0, b_0, ..., W_L, b_L."""
        flat: list[Array] = []
        for weight, bias in zip(self.weights, self.biases):
            flat.extend((weight, bias))
        return flat

    def with_parameters(self, parameters: Sequence[Array]) -> "NetworkParams":
        """Copy of this network holding ``parameters`` (same layout)."""
        if len(parameters) != 2 * len(self.weights):
            raise ConfigurationError(
                f"Expected {2 * len(self.weights)} parameter arrays, "
                f"got {len(parameters)}"
            )
        weights = tuple(np.asarray(p, dtype=np.float64) for p in parameters[0::2])
        biases = tuple(np.asarray(p, dtype=np.float64) for p in parameters[1::2])
        for old, new in zip(self.parameters(), parameters):
            if np.shape(new) != old.shape:
                raise ConfigurationError(
                    f"Parameter shape {np.shape(new)} does not match {old.shape}"
                )
        return NetworkParams(weights, biases, self.activation)

    def __call__(self, x: Operand) -> Operand:
        return net_forward(self, x)

    def __repr__(self) -> str:
        return (
            f"<NetworkParams: {self.input_dim}->{self.width}x{self.hidden_layers}"
            f"->{self.output_dim} {self.activation}>"
        )


def new_network(
    input_dim: int,
    output_dim: int,
    hidden_layers: int,
    width: int,
    activation: OutputActivation | str,
    seed: int | np.random.SeedSequence,
) -> NetworkParams:
    """Glorot-uniform network with zero biases, deterministic in ``seed``."""
    return NetworkParams.create(
        input_dim, output_dim, hidden_layers, width, activation, seed
    )


def parameter_count(
    input_dim: int, output_dim: int, hidden_layers: int, width: int
) -> int:
    """Closed-form parameter count of an N_{d0,d1,L,m} network."""
    return (
        width * input_dim
        + width
        + (hidden_layers - 1) * (width * width + width)
        + output_dim * width
        + output_dim
    )


def net_forward(
    network: NetworkParams,
    x: Operand,
    parameters: Sequence[Operand] | None = None,
) -> Operand:
    """Evaluate the network on a batch.

    Args:
        network: Architecture and, unless overridden, parameter values.
        x: Batch of shape (rows, d0), or a single (d0,) input.
        parameters: Replacement parameters in ``parameters()`` layout, e.g.
            tape variables when gradients are needed.

    Returns:
        Outputs of shape (rows, d1), or (d1,) for a single input.

    Raises:
        ConfigurationError: If the input width does not match d0.
    """
    shape = ad.shape_of(x)
    if not shape or shape[-1] != network.input_dim:
        raise ConfigurationError(
            f"Network expects inputs of width {network.input_dim}, got shape {shape}"
        )
    single = len(shape) == 1 and not isinstance(x, ad.Var)
    hidden: Operand = np.asarray(x, dtype=np.float64)[None, :] if single else x

    params = list(network.parameters()) if parameters is None else list(parameters)
    layers = len(params) // 2
    for layer in range(layers):
        hidden = ad.affine(hidden, params[2 * layer], params[2 * layer + 1])
        if layer < layers - 1:
            hidden = ad.relu(hidden)

    if network.activation == OutputActivation.TANH:
        hidden = ad.tanh(hidden)
    elif network.activation == OutputActivation.UNIT_BALL:
        hidden = ad.unit_ball(hidden)

    return ad.value_of(hidden)[0] if single else hidden


def lipschitz_bound(network: NetworkParams) -> float:
    """Product of the layers' spectral norms; every activation is 1-Lipschitz."""
    return float(np.prod([np.linalg.norm(weight, 2) for weight in network.weights]))


def serialize(network: NetworkParams) -> bytes:
    """Encode a network as a versioned little-endian byte string."""
    header = _HEADER.pack(
        WEIGHTS_MAGIC,
        WEIGHTS_VERSION,
        network.input_dim,
        network.output_dim,
        network.hidden_layers,
        network.width,
        _ACTIVATION_CODES[network.activation],
    )
    body = b"".join(
        np.ascontiguousarray(p, dtype="<f8").tobytes() for p in network.parameters()
    )
    return header + body


def deserialize(data: bytes) -> NetworkParams:
    """Decode a byte string written by ``serialize``.

    Raises:
        LoadError: On a bad magic, unknown version or activation, or a body
            whose length does not match the header.
    """
    if len(data) < _HEADER.size:
        raise LoadError(f"Weight data truncated: {len(data)} bytes, no full header")
    magic, version, d0, d1, layers, width, code = _HEADER.unpack_from(data)
    if magic != WEIGHTS_MAGIC:
        raise LoadError(f"Not a weight file (magic {magic!r})")
    if version != WEIGHTS_VERSION:
        raise LoadError(
            f"Unsupported weight file version {version} (expected {WEIGHTS_VERSION})"
        )
    activations = {code: kind for kind, code in _ACTIVATION_CODES.items()}
    if code not in activations:
        raise LoadError(f"Unknown output activation code {code}")
    if min(d0, d1, layers, width) < 1:
        raise LoadError(f"Invalid dims in header ({d0}, {d1}, {layers}, {width})")

    count = parameter_count(d0, d1, layers, width)
    body = data[_HEADER.size :]
    if len(body) != 8 * count:
        raise LoadError(
            f"Weight data truncated or oversized: {len(body)} bytes for {count} values"
        )
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)

    sizes = [d0] + [width] * layers + [d1]
    weights = []
    biases = []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        block = values[offset : offset + fan_in * fan_out]
        weights.append(block.reshape(fan_out, fan_in))
        offset += fan_in * fan_out
        biases.append(values[offset : offset + fan_out].copy())
        offset += fan_out
    return NetworkParams(tuple(weights), tuple(biases), activations[code])


def save(network: NetworkParams, path: Path | str) -> None:
    """Write a network to ``path``."""
    Path(path).write_bytes(serialize(network))
    logger.debug("Saved %r to %s", network, path)


def load(path: Path | str) -> NetworkParams:
    """Read a network from ``path``.

    Raises:
        LoadError: If the file is missing or malformed.
    """
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise LoadError(f"Cannot read weight file {path}: {exc}") from exc
    return deserialize(data)
