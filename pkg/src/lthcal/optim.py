"""Adam and SGD-with-momentum, mask-aware, plus a milestone learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .nn import Gradients, ParamSet

if TYPE_CHECKING:
    from .pruning import Mask


def _zeros_like(params: ParamSet) -> list[np.ndarray]:
    return [np.zeros_like(a) for a in (*params.weights, *params.biases)]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class SGDState:
    buffers: list[np.ndarray]
    momentum: float = 0.9
    weight_decay: float = 0.0
    milestones: tuple[tuple[int, float], ...] = field(default_factory=tuple)


OptimState = AdamState | SGDState


def adam_state(params: ParamSet) -> AdamState:
    return AdamState(m=_zeros_like(params), v=_zeros_like(params))


def sgd_state(params: ParamSet, momentum=0.9, weight_decay=0.0, milestones=()) -> SGDState:
    if not 0.0 <= momentum < 1.0:
        raise ConfigError(f"momentum must be in [0, 1), got {momentum}")
    if weight_decay < 0.0:
        raise ConfigError("weight_decay must be >= 0")
    return SGDState(_zeros_like(params), momentum, weight_decay, tuple(milestones))


def scheduled_lr(base_lr: float, epoch: int, milestones: Sequence[tuple[int, float]]) -> float:
    """Learning rate for a 0-based ``epoch``; each factor applies from its milestone epoch on."""
    lr = base_lr
    for at, factor in milestones:
        if epoch >= at:
            lr *= factor
    return lr


def optimizer_step(
    params: ParamSet,
    grads: Gradients,
    state: OptimState,
    lr: float,
    mask: Mask | None = None,
) -> None:
    """Update ``params`` and ``state`` in place; masked-out weights end at exactly 0."""
    if not lr > 0.0:
        raise ConfigError(f"learning rate must be > 0, got {lr}")
    tensors = [*params.weights, *params.biases]
    gvals = [*grads.weights, *grads.biases]
    if [t.shape for t in tensors] != [g.shape for g in gvals]:
        raise DimensionError("gradient shapes do not match parameters")

    if isinstance(state, AdamState):
        state.t += 1
        c1 = 1.0 - state.beta1**state.t
        c2 = 1.0 - state.beta2**state.t
        for p, g, m, v in zip(tensors, gvals, state.m, state.v):
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    else:
        for p, g, buf in zip(tensors, gvals, state.buffers):
            d = g + state.weight_decay * p if state.weight_decay else g
            buf *= state.momentum
            buf += d
            p -= lr * buf

    if mask is not None:
        for w, z in zip(params.weights, mask.layers):
            np.copyto(w, 0.0, where=~z)
