from pathlib import Path

import numpy as np
import pytest

from saddle import nn
from saddle.exceptions import ConfigurationError, LoadError
from saddle.nn import NetworkParams, OutputActivation


def test_parameter_count_matches_layout() -> None:
    """The closed-form count equals the stored parameters."""
    network = nn.new_network(3, 1, 3, 20, OutputActivation.TANH, 0)
    assert nn.parameter_count(3, 1, 3, 20) == 941
    assert network.parameter_count == 941
    assert network.hidden_layers == 3
    assert network.width == 20


def test_same_seed_same_network() -> None:
    """Initialization is deterministic in the seed."""
    first = nn.new_network(2, 1, 2, 8, "tanh", 7)
    second = nn.new_network(2, 1, 2, 8, "tanh", 7)
    third = nn.new_network(2, 1, 2, 8, "tanh", 8)
    for a, b in zip(first.parameters(), second.parameters()):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(first.weights[0], third.weights[0])


def test_output_activations_are_bounded(rng: np.random.Generator) -> None:
    """tanh outputs lie in (-1, 1) and unit-ball outputs in the open ball."""
    x = rng.normal(scale=10.0, size=(200, 3))
    interval = nn.new_network(3, 2, 2, 16, OutputActivation.TANH, 0)
    ball = nn.new_network(3, 2, 2, 16, OutputActivation.UNIT_BALL, 0)
    assert np.all(np.abs(interval(x)) <= 1.0)
    assert np.all(np.linalg.norm(ball(x), axis=-1) < 1.0)


def test_single_input_keeps_vector_shape() -> None:
    """A (d0,) input gives a (d1,) output."""
    network = nn.new_network(2, 3, 1, 4, OutputActivation.IDENTITY, 0)
    assert network(np.zeros(2)).shape == (3,)
    assert network(np.zeros((5, 2))).shape == (5, 3)


def test_wrong_input_width_is_rejected() -> None:
    """Inputs must have the network's input width."""
    network = nn.new_network(2, 1, 1, 4, OutputActivation.TANH, 0)
    with pytest.raises(ConfigurationError):
        network(np.zeros((3, 5)))


def test_invalid_dims_are_rejected() -> None:
    """Zero-sized layers are a configuration error."""
    with pytest.raises(ConfigurationError):
        NetworkParams.create(2, 1, 0, 4, OutputActivation.TANH, 0)


def test_lipschitz_bound_dominates_differences(rng: np.random.Generator) -> None:
    """|N(x) - N(y)| <= L |x - y| for the spectral bound L."""
    network = nn.new_network(2, 1, 2, 10, OutputActivation.TANH, 3)
    bound = nn.lipschitz_bound(network)
    x = rng.normal(size=(100, 2))
    y = rng.normal(size=(100, 2))
    lhs = np.linalg.norm(network(x) - network(y), axis=-1)
    rhs = bound * np.linalg.norm(x - y, axis=-1)
    assert np.all(lhs <= rhs + 1e-12)


def test_save_and_load(tmp_path: Path) -> None:
    """A saved network loads back with identical parameters."""
    network = nn.new_network(3, 2, 2, 5, OutputActivation.UNIT_BALL, 11)
    path = tmp_path / "net.w"
    nn.save(network, path)
    loaded = nn.load(path)
    assert loaded.activation == OutputActivation.UNIT_BALL
    for a, b in zip(network.parameters(), loaded.parameters()):
        np.testing.assert_array_equal(a, b)


def test_corrupt_weight_files_fail(tmp_path: Path) -> None:
    """Truncated data, a bad magic and missing files raise LoadError."""
    data = nn.serialize(nn.new_network(2, 1, 1, 3, OutputActivation.TANH, 0))
    with pytest.raises(LoadError):
        nn.deserialize(data[:-8])
    with pytest.raises(LoadError):
        nn.deserialize(b"XXXX" + data[4:])
    with pytest.raises(LoadError):
        nn.load(tmp_path / "missing.w")


def test_with_parameters_checks_shapes() -> None:
    """Replacement parameters must keep the layout."""
    network = nn.new_network(2, 1, 1, 3, OutputActivation.TANH, 0)
    params = network.parameters()
    with pytest.raises(ConfigurationError):
        network.with_parameters(params[:-1])
    with pytest.raises(ConfigurationError):
        network.with_parameters([np.zeros((1, 1))] + params[1:])
