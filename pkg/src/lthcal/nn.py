"""Dense ReLU networks with hand-written reverse-mode gradients.

Weights are stored ``(out, in)`` so a layer computes ``x @ W.T + b``.
Masks multiply weights on the fly; biases are never masked.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DimensionError, NumericError

if TYPE_CHECKING:
    from .pruning import Mask

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NetworkSpec:
    layer_dims: tuple[int, ...]
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if len(dims) < 2:
            raise ConfigError(f"need at least 2 layer dims, got {dims}")
        if any(d < 1 for d in dims):
            raise ConfigError(f"layer dims must be positive, got {dims}")
        if dims[-1] < 2:
            raise ConfigError("output layer needs at least 2 classes")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @property
    def num_classes(self) -> int:
        return self.layer_dims[-1]

    @property
    def weight_shapes(self) -> list[tuple[int, int]]:
        d = self.layer_dims
        return [(d[i + 1], d[i]) for i in range(len(d) - 1)]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


class ParamSet:
    """Per-layer weights and biases plus a read-only snapshot of their initial values."""

    def __init__(self, spec: NetworkSpec, weights, biases, init_weights=None, init_biases=None):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        shapes = spec.weight_shapes
        if [w.shape for w in self.weights] != shapes:
            raise DimensionError(f"weight shapes {[w.shape for w in self.weights]} != {shapes}")
        if [b.shape for b in self.biases] != [(s[0],) for s in shapes]:
            raise DimensionError("bias shapes do not match layer dims")
        if init_weights is None:
            init_weights, init_biases = self.weights, self.biases
        self.init_weights = tuple(_frozen(w) for w in init_weights)
        self.init_biases = tuple(_frozen(b) for b in init_biases)

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def copy(self) -> ParamSet:
        # snapshot arrays are immutable, so sharing them is safe
        out = ParamSet.__new__(ParamSet)
        out.spec = self.spec
        out.weights = [w.copy() for w in self.weights]
        out.biases = [b.copy() for b in self.biases]
        out.init_weights = self.init_weights
        out.init_biases = self.init_biases
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __iadd__(self, other: Gradients) -> Gradients:
        for a, b in zip(self.weights, other.weights):
            a += b
        for a, b in zip(self.biases, other.biases):
            a += b
        return self

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


@dataclass
class ForwardTrace:
    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)
    # per hidden layer: None, or the inverted-dropout multiplier (0 or 1/(1-rate))
    dropout: list[np.ndarray | None] = field(default_factory=list)
    probs: np.ndarray | None = None


def init_network(spec: NetworkSpec) -> ParamSet:
    """Glorot-uniform weights on +-sqrt(6 / (fan_in + fan_out)), zero biases."""
    rng = rngmod.make_rng(spec.seed, rngmod.INIT)
    weights, biases = [], []
    for fan_out, fan_in in spec.weight_shapes:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return ParamSet(spec, weights, biases)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Map dL/dp to dL/dlogits through the softmax Jacobian."""
    inner = np.sum(probs * grad_probs, axis=1, keepdims=True)
    return probs * (grad_probs - inner)


def _effective(params: ParamSet, mask: Mask | None, i: int) -> np.ndarray:
    w = params.weights[i]
    return w if mask is None else w * mask.layers[i]


def _check_mask(params: ParamSet, mask: Mask | None) -> None:
    if mask is None:
        return
    if len(mask.layers) != params.num_layers or any(
        m.shape != w.shape for m, w in zip(mask.layers, params.weights)
    ):
        raise DimensionError("mask does not match parameter shapes")


def forward(
    params: ParamSet,
    mask: Mask | None,
    x: np.ndarray,
    dropout_on: bool = False,
    rng: np.random.Generator | None = None,
    rate: float | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Run the masked network on a batch and return softmax probabilities.

    Dropout (inverted, hidden layers only) is used when ``dropout_on`` is set;
    ``rate`` overrides the NetworkSpec dropout rate.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.spec.layer_dims[0]:
        raise DimensionError(f"input shape {x.shape} does not match input dim {params.spec.layer_dims[0]}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite values in network input")
    _check_mask(params, mask)
    rate = params.spec.dropout_rate if rate is None else rate
    use_dropout = dropout_on and rate > 0.0
    if use_dropout and rng is None:
        raise ConfigError("dropout requires a random stream")

    trace = ForwardTrace(inputs=x)
    a = x
    last = params.num_layers - 1
    for i in range(params.num_layers):
        z = a @ _effective(params, mask, i).T + params.biases[i]
        trace.pre.append(z)
        if i == last:
            break
        a = np.maximum(z, 0.0)
        if use_dropout:
            keep = rng.random(a.shape) >= rate
            mult = keep / (1.0 - rate)
            a = a * mult
            trace.dropout.append(mult)
        else:
            trace.dropout.append(None)
        trace.post.append(a)
    probs = softmax(trace.pre[-1])
    trace.probs = probs
    return probs, trace


def backward(params: ParamSet, mask: Mask | None, trace: ForwardTrace, grad_logits: np.ndarray) -> Gradients:
    gw: list[np.ndarray] = [None] * params.num_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * params.num_layers  # type: ignore[list-item]
    delta = grad_logits
    for i in range(params.num_layers - 1, -1, -1):
        a_in = trace.inputs if i == 0 else trace.post[i - 1]
        gw[i] = delta.T @ a_in
        gb[i] = delta.sum(axis=0)
        if mask is not None:
            gw[i] = gw[i] * mask.layers[i]
        if i == 0:
            break
        delta = delta @ _effective(params, mask, i)
        if trace.dropout[i - 1] is not None:
            delta = delta * trace.dropout[i - 1]
        delta = delta * (trace.pre[i - 1] > 0.0)
    return Gradients(gw, gb)


def stochastic_forward(
    params: ParamSet,
    mask: Mask | None,
    x: np.ndarray,
    T: int,
    rng: np.random.Generator,
    rate: float | None = None,
) -> list[np.ndarray]:
    """T independent dropout realizations of the forward pass."""
    if T < 1:
        raise ConfigError(f"number of stochastic passes must be >= 1, got {T}")
    rate = params.spec.dropout_rate if rate is None else rate
    if rate == 0.0:
        warnings.warn("stochastic_forward with dropout rate 0 returns identical passes", stacklevel=2)
    return [forward(params, mask, x, dropout_on=True, rng=rng, rate=rate)[0] for _ in range(T)]


def check_finite(values: Sequence[np.ndarray], what: str) -> None:
    for v in values:
        if not np.all(np.isfinite(v)):
            raise NumericError(f"non-finite {what}")
