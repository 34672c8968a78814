"""Strategy loss and its exact gradient with respect to the network parameters."""

from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np

from . import calib
from .calib import Batch, StrategySpec
from .errors import DataError, NumericError
from .nn import Gradients, ParamSet, backward, forward, softmax_backward

if TYPE_CHECKING:
    from .pruning import Mask


def loss_and_grad(
    params: ParamSet,
    mask: Mask | None,
    batch: Batch,
    strategy: StrategySpec,
    rng: np.random.Generator,
) -> tuple[float, Gradients]:
    """Evaluate the strategy's objective on ``batch`` and backpropagate it.

    Mixup draws its partners and weights from ``rng``; the stochastic strategies
    draw their dropout masks from it. With a dropout rate of 0 the T passes
    coincide, so a single pass is used (same value and gradient, T times cheaper).
    """
    if len(batch) == 0:
        raise DataError("empty batch")
    if strategy.kind == "mixup":
        batch = calib.mixup_batch(
            batch, strategy.mixup_alpha, rng, strategy.mixup_lambda, params.spec.num_classes
        )

    if strategy.stochastic:
        T = strategy.T if strategy.dropout_rate > 0.0 else 1
        traces = [
            forward(params, mask, batch.inputs, dropout_on=True, rng=rng, rate=strategy.dropout_rate)[1]
            for _ in range(T)
        ]
    else:
        traces = [forward(params, mask, batch.inputs)[1]]

    value, grad_probs = calib.objective(strategy, [t.probs for t in traces], batch)
    if not np.isfinite(value):
        raise NumericError(f"{strategy.kind} loss is not finite")

    grads = None
    for trace, gp in zip(traces, grad_probs):
        g = backward(params, mask, trace, softmax_backward(trace.probs, gp))
        if grads is None:
            grads = g
        else:
            grads += g
    if not np.all(np.isfinite(grads.flat())):
        raise NumericError(f"{strategy.kind} gradient is not finite")
    return float(value), grads
