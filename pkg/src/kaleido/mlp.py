"""Bounded-output MLP that reconstructs its input.

The network maps ``R^D -> R^D`` through ``L`` hidden layers of width ``H``
with ReLU activations and a Sigmoid or Tanh output layer. Weights are stored
as ``(fan_in, fan_out)`` matrices so a batch ``x`` of shape ``(M, D)`` flows
through as ``x @ W + b``.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError, EmptyDatasetError, ModelFormatError, ShapeError
from .tensor import ActivationKind, activation_derivative, apply_activation, as_matrix, gemm

FORMAT_NAME = "kaleido-mlp"
FORMAT_VERSION = 1
INIT_SCHEMES = ("glorot", "fan_in")


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_width: int
    hidden_layers: int
    output_activation: ActivationKind = ActivationKind.SIGMOID
    hidden_activation: ActivationKind = ActivationKind.RELU
    init_seed: int = 0
    init_scheme: str = "glorot"

    def __post_init__(self):
        object.__setattr__(self, "output_activation", ActivationKind(self.output_activation))
        object.__setattr__(self, "hidden_activation", ActivationKind(self.hidden_activation))
        for name in ("input_dim", "hidden_width", "hidden_layers"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if not self.output_activation.bounded:
            raise ValueError("output_activation must be sigmoid or tanh")
        if self.init_scheme not in INIT_SCHEMES:
            raise ValueError(f"init_scheme must be one of {INIT_SCHEMES}, got {self.init_scheme!r}")

    @property
    def layer_sizes(self):
        """Widths ``[D, H, ..., H, D]`` of the network's activations."""
        return [self.input_dim] + [self.hidden_width] * self.hidden_layers + [self.input_dim]

    def to_dict(self):
        return {
            "input_dim": self.input_dim,
            "hidden_width": self.hidden_width,
            "hidden_layers": self.hidden_layers,
            "hidden_activation": self.hidden_activation.value,
            "output_activation": self.output_activation.value,
            "init_seed": self.init_seed,
            "init_scheme": self.init_scheme,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            input_dim=int(d["input_dim"]),
            hidden_width=int(d["hidden_width"]),
            hidden_layers=int(d["hidden_layers"]),
            output_activation=d.get("output_activation", "sigmoid"),
            hidden_activation=d.get("hidden_activation", "relu"),
            init_seed=int(d.get("init_seed", 0)),
            init_scheme=d.get("init_scheme", "glorot"),
        )


@dataclass
class MlpParams:
    """Per-layer weights ``(fan_in, fan_out)`` and biases ``(fan_out,)``."""

    weights: list
    biases: list
    hidden_activation: ActivationKind = ActivationKind.RELU
    output_activation: ActivationKind = ActivationKind.SIGMOID

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be non-empty lists of equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} disagree")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(
                    f"layer {i} expects {w.shape[0]} inputs but layer {i - 1} "
                    f"produces {self.weights[i - 1].shape[1]}"
                )
        if self.weights[0].shape[0] != self.weights[-1].shape[1]:
            raise ShapeError("output width must equal input width")

    @property
    def input_dim(self):
        return self.weights[0].shape[0]

    @property
    def n_layers(self):
        return len(self.weights)

    def arrays(self):
        """All parameter arrays, weights and biases interleaved per layer."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return type(self)(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.hidden_activation,
            self.output_activation,
        )

    def zeros_like(self):
        return type(self)(
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
            self.hidden_activation,
            self.output_activation,
        )


class ParamGrads(MlpParams):
    """Gradients with the same layout as :class:`MlpParams`."""


@dataclass
class ForwardCache:
    inputs: list  # input to each layer; inputs[0] is x
    preacts: list  # preactivation of each layer


def init_params(spec):
    """Random initial parameters, deterministic in ``spec.init_seed``.

    ``glorot``: weights ``U(-sqrt(6/(fan_in+fan_out)), +...)``, zero biases.
    ``fan_in``: weights and biases ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``.
    """
    rng = np.random.default_rng(spec.init_seed)
    sizes = spec.layer_sizes
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if spec.init_scheme == "glorot":
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        else:
            limit = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(rng.uniform(-limit, limit, size=fan_out))
    return MlpParams(weights, biases, spec.hidden_activation, spec.output_activation)


def forward(params, x):
    """Evaluate the network on a batch.

    Args:
        params: Network parameters.
        x: Array of shape ``(M, D)`` (a 1-D vector is treated as one row).

    Returns:
        ``(output, cache)`` where ``output`` has shape ``(M, D)`` and
        ``cache`` holds what :func:`backward` needs.
    """
    x = as_matrix(x)
    if x.shape[1] != params.input_dim:
        raise ShapeError(f"input has {x.shape[1]} columns, model expects {params.input_dim}")
    inputs, preacts = [], []
    a = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = gemm(a, w) + b
        preacts.append(z)
        a = apply_activation(params.output_activation if i == last else params.hidden_activation, z)
    return a, ForwardCache(inputs, preacts)


def predict(params, x):
    return forward(params, x)[0]


def reconstruction_loss(x, y):
    """Mean squared reconstruction error ``sum ||x_i - y_i||^2 / (M * D)``."""
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.size == 0:
        raise EmptyDatasetError("reconstruction loss of an empty batch")
    r = x - y
    return float(np.sum(r * r) / r.size)


def per_point_loss(x, y):
    """Row-wise ``||x_i - y_i||^2 / D``."""
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    r = x - y
    return np.sum(r * r, axis=1) / x.shape[1]


def _backprop(params, cache, upstream):
    """Propagate ``dLoss/dOutput`` back through the network.

    Returns ``(grads, dLoss/dInput)``.
    """
    n = params.n_layers
    if len(cache.preacts) != n:
        raise ShapeError(f"cache has {len(cache.preacts)} layers, params have {n}")
    gw = [None] * n
    gb = [None] * n
    delta = upstream * activation_derivative(params.output_activation, cache.preacts[-1])
    for i in range(n - 1, -1, -1):
        a_in = cache.inputs[i]
        if a_in.shape[1] != params.weights[i].shape[0]:
            raise ShapeError(f"cache layer {i} does not match params")
        gw[i] = gemm(a_in.T, delta)
        gb[i] = delta.sum(axis=0)
        back = gemm(delta, params.weights[i].T)
        if i:
            delta = back * activation_derivative(params.hidden_activation, cache.preacts[i - 1])
    grads = ParamGrads(gw, gb, params.hidden_activation, params.output_activation)
    return grads, back


def backward(params, cache, x, output):
    """Gradient of ``reconstruction_loss(x, forward(x))`` w.r.t. every parameter.

    ``x`` is treated as a constant target; only the parameters move.
    """
    x = as_matrix(x)
    if x.shape != output.shape:
        raise ShapeError(f"x {x.shape} and output {output.shape} differ")
    upstream = 2.0 * (output - x) / x.size
    return _backprop(params, cache, upstream)[0]


def input_gradient(params, x):
    """Per-row gradient of ``||x - f(x)||^2 / D`` with respect to ``x``.

    Returns ``(objective, grad)``: the per-row objective values (shape
    ``(M,)``) and their gradients (shape ``(M, D)``). Row ``i``'s gradient
    only depends on row ``i``.
    """
    x = as_matrix(x)
    y, cache = forward(params, x)
    r = x - y
    d = x.shape[1]
    _, jt_r = _backprop(params, cache, r)
    grad = 2.0 / d * (r - jt_r)
    return np.sum(r * r, axis=1) / d, grad


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        arrays = params.arrays()
        return cls(
            [np.zeros_like(a) for a in arrays],
            [np.zeros_like(a) for a in arrays],
            0, lr, beta1, beta2, eps,
        )


def adam_step(params, grads, state):
    """One bias-corrected Adam update, applied in place.

    Returns ``(params, state)`` for convenience; both are the objects passed in.

    Raises:
        DivergenceError: if any gradient entry is non-finite. Nothing is
            modified in that case.
    """
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(p_arrays) != len(g_arrays) or len(p_arrays) != len(state.m):
        raise ShapeError("params, grads and optimizer state have different layouts")
    for i, (p, g) in enumerate(zip(p_arrays, g_arrays)):
        if p.shape != g.shape:
            raise ShapeError(f"array {i}: param {p.shape} vs grad {g.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(
                f"non-finite gradient in array {i} (layer {i // 2}, "
                f"{'weight' if i % 2 == 0 else 'bias'}) at optimizer step {state.step + 1}",
                last_good_epoch=state.step,
            )
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def _fmt_array(a):
    if a.ndim == 1:
        return "[" + ", ".join(format(float(v), ".17g") for v in a) + "]"
    return "[\n      " + ",\n      ".join(_fmt_array(row) for row in a) + "\n    ]"


def serialize_model(spec, params):
    """Render the model as a JSON text document.

    Every weight is written with 17 significant digits, which round-trips
    float64 exactly. The output is a pure function of its inputs.
    """
    if [w.shape for w in params.weights] != list(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        raise ShapeError("params do not match spec")
    for a in params.arrays():
        if not np.all(np.isfinite(a)):
            raise ValueError("cannot serialise non-finite parameters")
    layers = []
    for w, b in zip(params.weights, params.biases):
        layers.append(
            "  {\n    \"weights\": " + _fmt_array(w) + ",\n    \"bias\": " + _fmt_array(b) + "\n  }"
        )
    header = json.dumps({"format": FORMAT_NAME, "version": FORMAT_VERSION, "spec": spec.to_dict()})
    return header[:-1] + ",\n\"layers\": [\n" + ",\n".join(layers) + "\n]}\n"


def deserialize_model(document):
    """Parse a document produced by :func:`serialize_model`.

    Raises:
        ModelFormatError: on malformed JSON, wrong format/version, or layer
            shapes inconsistent with the embedded spec.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ModelFormatError(f"not a {FORMAT_NAME} document")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(
            f"unsupported model format version {doc.get('version')!r}, expected {FORMAT_VERSION}"
        )
    try:
        spec = MlpSpec.from_dict(doc["spec"])
        layers = doc["layers"]
        weights = [np.array(layer["weights"], dtype=np.float64) for layer in layers]
        biases = [np.array(layer["bias"], dtype=np.float64) for layer in layers]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from exc
    sizes = spec.layer_sizes
    expected = list(zip(sizes[:-1], sizes[1:]))
    got = [w.shape for w in weights]
    if got != expected:
        raise ModelFormatError(f"layer shapes {got} inconsistent with spec {expected}")
    if [b.shape for b in biases] != [(n,) for _, n in expected]:
        raise ModelFormatError("bias shapes inconsistent with spec")
    try:
        params = MlpParams(weights, biases, spec.hidden_activation, spec.output_activation)
    except ShapeError as exc:
        raise ModelFormatError(str(exc)) from exc
    return spec, params


def save_model(path, spec, params):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize_model(spec, params))


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return deserialize_model(fh.read())
