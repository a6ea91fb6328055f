"""Fully-connected networks on top of the autodiff tape."""

from dataclasses import dataclass

import numpy as np

from estimator.core import autodiff as ad
from estimator.core.autodiff import as_tensor
from estimator.exceptions import ParameterError, ShapeError

TIRE_NET = "tire_net"
DYNAMICS_NET = "dynamics_net"
TIRE_HIDDEN = (64, 64, 64)
DYNAMICS_HIDDEN = (256, 256, 256)
FEATURE_DIM = 9


@dataclass(frozen=True)
class MlpParams:
    """Weights and biases of one MLP, as arrays or tensors.

    ``weights[i]`` has shape ``(in, out)`` so a batch of rows maps with a
    single matmul. ``activations`` names the function after each hidden layer.
    """

    weights: tuple
    biases: tuple
    activations: tuple

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or len(self.weights) == 0:
            raise ShapeError("an MLP needs one bias per weight matrix and at least one layer")
        if len(self.activations) != len(self.weights) - 1:
            raise ShapeError("one activation per hidden layer is required")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if len(w.shape) != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} do not conform")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i}: input dim {w.shape[0]} != previous output {self.weights[i - 1].shape[1]}")

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def output_dim(self):
        return self.weights[-1].shape[1]

    @property
    def dims(self):
        return [self.input_dim] + [w.shape[1] for w in self.weights]

    @classmethod
    def from_view(cls, view, prefix):
        """Collect ``{prefix}.w{i}`` / ``{prefix}.b{i}`` entries of a parameter view."""
        weights, biases = [], []
        while f"{prefix}.w{len(weights)}" in view:
            bias = f"{prefix}.b{len(biases)}"
            if bias not in view:
                raise ShapeError(f"layer {len(weights)} of {prefix!r} has no bias {bias!r}")
            weights.append(view[f"{prefix}.w{len(weights)}"])
            biases.append(view[bias])
        if not weights:
            raise ShapeError(f"no parameters with prefix {prefix!r}")
        return cls(tuple(weights), tuple(biases), ("tanh",) * (len(weights) - 1))

    def to_parameters(self, prefix):
        params = ad.ParameterSet()
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            params.add(f"{prefix}.w{i}", np.asarray(getattr(w, "values", w)))
            params.add(f"{prefix}.b{i}", np.asarray(getattr(b, "values", b)))
        return params

    @property
    def size(self):
        return sum(int(np.prod(w.shape)) + int(np.prod(b.shape)) for w, b in zip(self.weights, self.biases))


_ACTIVATIONS = {"tanh": ad.tanh, "identity": lambda t: t}


def init_params(dims, seed):
    """Xavier-uniform initialization; the output layer is shrunk by 0.01."""
    dims = list(dims)
    if len(dims) < 2 or any(int(d) <= 0 for d in dims):
        raise ParameterError(f"invalid layer dimensions {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        if i == len(dims) - 2:
            w *= 0.01
        weights.append(w)
        biases.append(np.zeros(fan_out))
    return MlpParams(tuple(weights), tuple(biases), ("tanh",) * (len(dims) - 2))


def mlp_forward(nn, features):
    features = as_tensor(features)
    if features.shape[-1] != nn.input_dim:
        raise ShapeError(f"feature length {features.shape[-1]} != network input dim {nn.input_dim}")
    hidden = features
    last = len(nn.weights) - 1
    for i, (w, b) in enumerate(zip(nn.weights, nn.biases)):
        hidden = ad.matmul(hidden, w) + b
        if i < last:
            hidden = _ACTIVATIONS[nn.activations[i]](hidden)
    return hidden


def network_parameters(prefix, dims, seed):
    return init_params(dims, seed).to_parameters(prefix)
