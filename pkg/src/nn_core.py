"""Multilayer perceptrons with analytic backpropagation, Adam and Polyak updates.

All arithmetic runs in float64. Weight matrices are stored with shape
(fan_in, fan_out) so a batch of row vectors propagates as ``x @ W + b``.
"""

import hashlib
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, DimensionError

logger = logging.getLogger(__name__)

OUTPUT_ACTIVATIONS = ("tanh", "identity")


@dataclass
class MlpNetwork:
    """Feed-forward network: rectifier on hidden layers, tanh or identity on the output."""

    layer_sizes: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    output_activation: str = "tanh"
    hidden_activation: str = "relu"

    @property
    def input_size(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_size(self) -> int:
        return self.layer_sizes[-1]

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(
            layer_sizes=list(self.layer_sizes),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            output_activation=self.output_activation,
            hidden_activation=self.hidden_activation,
        )

    def is_finite(self) -> bool:
        return all(np.isfinite(w).all() and np.isfinite(b).all() for w, b in zip(self.weights, self.biases))

    def same_architecture(self, other: "MlpNetwork") -> bool:
        return (list(self.layer_sizes) == list(other.layer_sizes)
                and self.output_activation == other.output_activation
                and self.hidden_activation == other.hidden_activation)


@dataclass
class GradientSet:
    """Per-layer gradients, shape-matched to the owning network."""

    weight_grads: List[np.ndarray]
    bias_grads: List[np.ndarray]

    @classmethod
    def zeros_like(cls, net: MlpNetwork) -> "GradientSet":
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def arrays(self) -> List[np.ndarray]:
        return list(self.weight_grads) + list(self.bias_grads)

    def is_zero(self) -> bool:
        return all(not np.any(g) for g in self.arrays())


@dataclass
class AdamState:
    """Bias-corrected Adam moments for one network."""

    first_moment: List[np.ndarray]
    second_moment: List[np.ndarray]
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    @classmethod
    def create(cls, net: MlpNetwork, learning_rate: float, beta1: float = 0.9,
               beta2: float = 0.999, epsilon: float = 1e-8) -> "AdamState":
        if learning_rate <= 0:
            raise ConfigurationError(f"Adam learning rate must be positive, got {learning_rate}")
        if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
            raise ConfigurationError(f"Adam betas must lie in (0, 1), got {beta1}, {beta2}")
        arrays = list(net.weights) + list(net.biases)
        return cls(
            first_moment=[np.zeros_like(a) for a in arrays],
            second_moment=[np.zeros_like(a) for a in arrays],
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )

    def copy(self) -> "AdamState":
        return AdamState(
            first_moment=[m.copy() for m in self.first_moment],
            second_moment=[v.copy() for v in self.second_moment],
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            step_count=self.step_count,
        )


def _validate_layer_sizes(layer_sizes: Sequence[int]) -> List[int]:
    sizes = list(layer_sizes or [])
    if len(sizes) < 2:
        raise ConfigurationError(f"An MLP needs at least 2 layer sizes, got {sizes}")
    if any(int(s) != s or s <= 0 for s in sizes):
        raise ConfigurationError(f"Layer sizes must be positive integers, got {sizes}")
    return [int(s) for s in sizes]


def mlp_init(layer_sizes: Sequence[int], output_activation: str = "tanh", seed: int = 0) -> MlpNetwork:
    """
    Build a network with fan-in scaled uniform weights.

    Args:
        layer_sizes: Input size, hidden sizes, output size
        output_activation: 'tanh' or 'identity'
        seed: Seed for the parameter draw

    Returns:
        A freshly initialized MlpNetwork
    """
    sizes = _validate_layer_sizes(layer_sizes)
    if output_activation not in OUTPUT_ACTIVATIONS:
        raise ConfigurationError(f"Unsupported output activation: {output_activation}")

    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpNetwork(layer_sizes=sizes, weights=weights, biases=biases, output_activation=output_activation)


def _as_batch(net: MlpNetwork, x: Any) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    batch = arr[np.newaxis, :] if single else arr
    if batch.ndim != 2 or batch.shape[1] != net.input_size:
        raise DimensionError(f"Expected input of length {net.input_size}, got shape {arr.shape}")
    return batch, single


def _forward_cache(net: MlpNetwork, batch: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """Return (layer inputs, pre-activations) for every layer."""
    inputs, pre_activations = [], []
    h = batch
    last = len(net.weights) - 1
    for k, (w, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(h)
        z = h @ w + b
        pre_activations.append(z)
        if k < last:
            h = np.maximum(z, 0.0)
        elif net.output_activation == "tanh":
            h = np.tanh(z)
        else:
            h = z
    inputs.append(h)
    return inputs, pre_activations


def forward(net: MlpNetwork, x: Any) -> np.ndarray:
    """Evaluate the network on one input vector or a batch of row vectors."""
    batch, single = _as_batch(net, x)
    inputs, _ = _forward_cache(net, batch)
    out = inputs[-1]
    return out[0] if single else out


def backward(net: MlpNetwork, x: Any, output_gradient: Any) -> Tuple[GradientSet, np.ndarray]:
    """
    Gradients of (output . output_gradient) with respect to parameters and input.

    For a batch the parameter gradients are summed over rows and the input
    gradient keeps one row per sample.

    Args:
        net: Network to differentiate
        x: Input vector or batch
        output_gradient: Vector or batch matching the network output

    Returns:
        Tuple of (GradientSet, input gradient)
    """
    batch, single = _as_batch(net, x)
    grad_out = np.asarray(output_gradient, dtype=np.float64)
    if single:
        grad_out = grad_out[np.newaxis, :] if grad_out.ndim == 1 else grad_out
    if grad_out.shape != (batch.shape[0], net.output_size):
        raise DimensionError(
            f"Expected output gradient of shape {(batch.shape[0], net.output_size)}, got {grad_out.shape}")

    inputs, pre_activations = _forward_cache(net, batch)
    n_layers = len(net.weights)
    weight_grads: List[np.ndarray] = [np.empty(0)] * n_layers
    bias_grads: List[np.ndarray] = [np.empty(0)] * n_layers

    if net.output_activation == "tanh":
        delta = grad_out * (1.0 - inputs[-1] ** 2)
    else:
        delta = grad_out
    for k in range(n_layers - 1, -1, -1):
        weight_grads[k] = inputs[k].T @ delta
        bias_grads[k] = delta.sum(axis=0)
        upstream = delta @ net.weights[k].T
        if k > 0:
            delta = upstream * (pre_activations[k - 1] > 0.0)
        else:
            delta = upstream

    input_gradient = delta[0] if single else delta
    return GradientSet(weight_grads, bias_grads), input_gradient


def _check_shapes(net: MlpNetwork, arrays: Sequence[np.ndarray], what: str) -> None:
    expected = [w.shape for w in net.weights] + [b.shape for b in net.biases]
    actual = [a.shape for a in arrays]
    if expected != actual:
        raise DimensionError(f"{what} shapes {actual} do not match network shapes {expected}")


def adam_step(net: MlpNetwork, state: AdamState, grads: GradientSet) -> Tuple[MlpNetwork, AdamState]:
    """Apply one bias-corrected Adam update in place and return (net, state)."""
    grad_arrays = grads.arrays()
    _check_shapes(net, grad_arrays, "Gradient")
    _check_shapes(net, state.first_moment, "Adam moment")

    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    params = list(net.weights) + list(net.biases)
    for param, g, m, v in zip(params, grad_arrays, state.first_moment, state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        param -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
    return net, state


def polyak_update(target: MlpNetwork, source: MlpNetwork, tau: float) -> MlpNetwork:
    """Blend source into target in place: target <- tau * source + (1 - tau) * target."""
    if not target.same_architecture(source):
        raise DimensionError(f"Cannot blend {source.layer_sizes} into {target.layer_sizes}")
    if not 0.0 <= tau <= 1.0:
        raise ConfigurationError(f"Polyak coefficient must lie in [0, 1], got {tau}")
    for t_arr, s_arr in zip(target.weights + target.biases, source.weights + source.biases):
        if tau == 1.0:
            t_arr[...] = s_arr
        else:
            t_arr *= (1.0 - tau)
            t_arr += tau * s_arr
    return target


def describe(net: MlpNetwork) -> Dict[str, Any]:
    """Architecture descriptor used by checkpoints."""
    return {
        "layer_sizes": list(net.layer_sizes),
        "hidden_activation": net.hidden_activation,
        "output_activation": net.output_activation,
    }


def export_parameters(net: MlpNetwork) -> Tuple[Dict[str, Any], np.ndarray]:
    """Flatten parameters layer by layer (weights row-major, then bias)."""
    chunks = []
    for w, b in zip(net.weights, net.biases):
        chunks.append(w.ravel())
        chunks.append(b.ravel())
    return describe(net), np.concatenate(chunks).astype(np.float64)


def import_parameters(descriptor: Dict[str, Any], flat: Any) -> MlpNetwork:
    """Rebuild a network from an architecture descriptor and a flat parameter array."""
    sizes = _validate_layer_sizes(descriptor.get("layer_sizes"))
    output_activation = descriptor.get("output_activation", "tanh")
    if output_activation not in OUTPUT_ACTIVATIONS:
        raise ConfigurationError(f"Unsupported output activation: {output_activation}")
    flat = np.asarray(flat, dtype=np.float64).ravel()
    expected = sum(i * o + o for i, o in zip(sizes[:-1], sizes[1:]))
    if flat.size != expected:
        raise DimensionError(f"Architecture {sizes} needs {expected} parameters, got {flat.size}")

    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out).copy())
        offset += fan_in * fan_out
        biases.append(flat[offset:offset + fan_out].copy())
        offset += fan_out
    return MlpNetwork(layer_sizes=sizes, weights=weights, biases=biases, output_activation=output_activation)


def parameter_hash(net: MlpNetwork) -> str:
    """SHA-256 of the flat float64 parameters."""
    _, flat = export_parameters(net)
    return hashlib.sha256(flat.astype("<f8").tobytes()).hexdigest()


def export_adam_state(state: AdamState) -> Dict[str, Any]:
    """Flatten optimizer moments in the same order as export_parameters."""
    n_layers = len(state.first_moment) // 2
    order = []
    for k in range(n_layers):
        order.extend([k, n_layers + k])
    first = np.concatenate([state.first_moment[i].ravel() for i in order]) if order else np.zeros(0)
    second = np.concatenate([state.second_moment[i].ravel() for i in order]) if order else np.zeros(0)
    return {
        "first_moment": first,
        "second_moment": second,
        "learning_rate": state.learning_rate,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "epsilon": state.epsilon,
        "step_count": state.step_count,
    }


def import_adam_state(net: MlpNetwork, exported: Dict[str, Any]) -> AdamState:
    """Rebuild an AdamState for ``net`` from export_adam_state output."""
    state = AdamState.create(net, float(exported["learning_rate"]), float(exported["beta1"]),
                             float(exported["beta2"]), float(exported["epsilon"]))
    state.step_count = int(exported["step_count"])
    descriptor = describe(net)
    first = import_parameters(descriptor, exported["first_moment"])
    second = import_parameters(descriptor, exported["second_moment"])
    state.first_moment = list(first.weights) + list(first.biases)
    state.second_moment = list(second.weights) + list(second.biases)
    if any((v < 0).any() for v in state.second_moment):
        raise DimensionError("Adam second moments must be non-negative")
    return state
