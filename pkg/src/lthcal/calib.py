"""Calibration-aware training objectives.

Every loss here is a function of softmax outputs. The private ``_*`` helpers
return ``(value, d value / d probs)`` so the network code only has to push
gradients through the softmax. Confidence weights (the VWCC ``alpha`` and
LWCC ``beta``) are treated as constants when differentiating.

All batch losses are means over the samples in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

EPS_LOG = 1e-12
# smoothing for |x| in the bin-assignment penalty: sqrt(x^2 + s^2) - s
ABS_SMOOTH = 1e-6

KINDS = ("none", "vwcc", "mixup", "mda", "lwcc", "lwcc_si", "nba")
STOCHASTIC = frozenset({"vwcc", "lwcc_si"})


@dataclass(frozen=True)
class StrategySpec:
    """Which training objective is active, with all of its knobs.

    ``alpha_override``, ``beta_override`` and ``mixup_lambda`` pin the
    otherwise data-dependent weights, either to one value or (alpha, beta)
    to one value per sample of the batch. They exist for ablations, for the
    reduction-to-cross-entropy checks and for freezing the weights in
    finite-difference checks.
    """

    kind: str = "none"
    T: int = 5
    dropout_rate: float = 0.2
    mixup_alpha: float = 0.2
    gamma_d: float = 0.05
    gamma_n: float = 0.1
    nba_bins: int = 10
    nba_bandwidth: float = 0.05
    nba_weights: tuple[float, ...] | None = None
    vwcc_alpha_complement: bool = True
    mda_prior: tuple[float, ...] | None = None
    alpha_override: float | tuple[float, ...] | None = None
    beta_override: float | tuple[float, ...] | None = None
    mixup_lambda: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown strategy {self.kind!r}; expected one of {', '.join(KINDS)}")
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("strategy dropout_rate must be in [0, 1)")
        if not self.mixup_alpha > 0.0:
            raise ConfigError("mixup_alpha must be > 0")
        if self.nba_bins < 2:
            raise ConfigError("nba_bins must be >= 2")
        if not self.nba_bandwidth > 0.0:
            raise ConfigError("nba_bandwidth must be > 0")
        if self.gamma_d < 0.0 or self.gamma_n < 0.0:
            raise ConfigError("gamma_d and gamma_n must be >= 0")
        if self.nba_weights is not None:
            if len(self.nba_weights) != self.nba_bins or min(self.nba_weights) <= 0.0:
                raise ConfigError("nba_weights needs nba_bins strictly positive entries")
        for name in ("alpha_override", "beta_override", "mixup_lambda"):
            v = getattr(self, name)
            if v is not None and not np.all((np.asarray(v) >= 0.0) & (np.asarray(v) <= 1.0)):
                raise ConfigError(f"{name} must lie in [0, 1]")

    @property
    def stochastic(self) -> bool:
        return self.kind in STOCHASTIC

    def bin_weights(self) -> np.ndarray:
        if self.nba_weights is not None:
            return np.asarray(self.nba_weights, dtype=np.float64)
        return v_shaped_weights(self.nba_bins)


@dataclass
class Batch:
    inputs: np.ndarray
    labels: np.ndarray
    soft_labels: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.shape[0] == 0:
            raise DataError("empty batch")
        if self.labels.shape != (self.inputs.shape[0],):
            raise DataError("labels do not match batch size")
        if self.soft_labels is not None:
            self.soft_labels = np.asarray(self.soft_labels, dtype=np.float64)
            if np.any(np.abs(self.soft_labels.sum(axis=1) - 1.0) > 1e-9):
                raise DataError("soft label rows must sum to 1")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def targets(self) -> np.ndarray:
        return self.labels if self.soft_labels is None else self.soft_labels


def v_shaped_weights(B: int) -> np.ndarray:
    """1 in the middle bins rising to 2 at both ends."""
    b = np.arange(1, B + 1)
    return 1.0 + np.abs(2 * b - B - 1) / (B - 1)


def _flog(p):
    return np.log(np.maximum(p, EPS_LOG))


def _dflog(p):
    with np.errstate(divide="ignore"):
        return np.where(p > EPS_LOG, 1.0 / np.maximum(p, EPS_LOG), 0.0)


def one_hot(labels: np.ndarray, K: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise DataError(f"label out of range [0, {K})")
    out = np.zeros((labels.shape[0], K))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _target_matrix(targets: np.ndarray, K: int) -> np.ndarray:
    targets = np.asarray(targets)
    if targets.ndim == 1:
        return one_hot(targets, K)
    if targets.shape[1] != K:
        raise DataError("soft targets do not match number of classes")
    return targets.astype(np.float64)


# --- cross entropy and KL to uniform ---------------------------------------


def _ce_rows(probs: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = _target_matrix(targets, probs.shape[1])
    return -np.sum(t * _flog(probs), axis=1), -t * _dflog(probs)


def _cross_entropy(probs, targets):
    rows, g = _ce_rows(probs, targets)
    return rows.mean(), g / probs.shape[0]


def cross_entropy(probs: np.ndarray, targets: np.ndarray) -> float:
    """Mean over samples of -sum_k t_k log max(p_k, 1e-12); integer targets are one-hot."""
    return float(_cross_entropy(np.asarray(probs, dtype=np.float64), targets)[0])


def _kl_rows(probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    K = probs.shape[1]
    vals = np.sum(np.log(1.0 / K) - _flog(probs), axis=1) / K
    return vals, -_dflog(probs) / K


def kl_uniform(p: np.ndarray) -> float:
    """KL(U || p) for a single probability row, with the log floor."""
    p = np.atleast_2d(np.asarray(p, dtype=np.float64))
    return float(_kl_rows(p)[0][0])


# --- VWCC -------------------------------------------------------------------


def bhattacharyya(p: np.ndarray, q: np.ndarray) -> float:
    bc = np.sum(np.sqrt(np.asarray(p, dtype=np.float64) * np.asarray(q, dtype=np.float64)))
    return float(min(max(bc, 0.0), 1.0))


def _vwcc_alphas(stack: np.ndarray, complement: bool = True) -> np.ndarray:
    """Per-sample weights from a (T, N, K) stack of stochastic predictions."""
    mean = stack.mean(axis=0)
    bc = np.clip(np.sum(np.sqrt(stack * mean[None]), axis=2), 0.0, 1.0)
    agreement = bc.mean(axis=0)
    alpha = 1.0 - agreement if complement else agreement
    return np.clip(alpha, 0.0, 1.0)


def vwcc_alpha(preds: np.ndarray, complement: bool = True) -> float:
    """One minus the mean Bhattacharyya coefficient between each pass and the mean pass.

    Args:
        preds: (T, K) predictions for a single sample.
        complement: if False, return the mean coefficient itself.
    """
    stack = np.asarray(preds, dtype=np.float64)[:, None, :]
    return float(_vwcc_alphas(stack, complement)[0])


def _pinned(value, n: int) -> np.ndarray:
    v = np.asarray(value, dtype=np.float64)
    if v.ndim and v.shape != (n,):
        raise DataError(f"expected {n} per-sample weights, got {v.shape[0]}")
    return np.broadcast_to(v, (n,))


def _mean_pass(stack: np.ndarray) -> np.ndarray:
    return stack[0] if stack.shape[0] == 1 else stack.mean(axis=0)


def _vwcc(stack, labels, complement=True, alpha=None):
    T, N, _ = stack.shape
    mean = _mean_pass(stack)
    a = _vwcc_alphas(stack, complement) if alpha is None else _pinned(alpha, N)
    ce, gce = _ce_rows(mean, labels)
    kl, gkl = _kl_rows(mean)
    value = ((1.0 - a) * ce + a * kl).mean()
    g = ((1.0 - a)[:, None] * gce + a[:, None] * gkl) / N
    return value, g, a


def vwcc_loss(stoch_preds: np.ndarray, labels: np.ndarray, complement: bool = True, alpha=None) -> float:
    """Variance-weighted confidence calibration on the mean of T stochastic passes."""
    stack = np.asarray(stoch_preds, dtype=np.float64)
    return float(_vwcc(stack, labels, complement, alpha)[0])


# --- mixup ------------------------------------------------------------------


def mixup_batch(
    batch: Batch,
    mixup_alpha: float,
    rng: np.random.Generator,
    lam: float | None = None,
    num_classes: int | None = None,
) -> Batch:
    """Convex combinations of each sample with a partner from a seeded permutation.

    One mixing weight per pair is drawn from Beta(alpha, alpha) unless ``lam`` pins it.
    """
    n = len(batch)
    if n < 2:
        raise DataError("mixup needs a batch of at least 2 samples")
    if not mixup_alpha > 0.0:
        raise ConfigError("mixup_alpha must be > 0")
    partner = rng.permutation(n)
    lam_v = rng.beta(mixup_alpha, mixup_alpha, size=n) if lam is None else np.full(n, float(lam))
    if batch.soft_labels is not None:
        K = batch.soft_labels.shape[1]
    else:
        K = num_classes if num_classes is not None else int(batch.labels.max()) + 1
    y = _target_matrix(batch.targets, K)
    lx = lam_v[:, None]
    x = lx * batch.inputs + (1.0 - lx) * batch.inputs[partner]
    soft = lx * y + (1.0 - lx) * y[partner]
    return Batch(x, batch.labels, soft)


# --- marginal distribution alignment ----------------------------------------


def _mda(probs, gamma, prior=None):
    N, K = probs.shape
    prior = np.full(K, 1.0 / K) if prior is None else np.asarray(prior, dtype=np.float64)
    hbar = probs.mean(axis=0)
    safe = np.where(prior > 0.0, prior, 1.0)
    terms = np.where(prior > 0.0, prior * (np.log(safe) - _flog(hbar)), 0.0)
    value = gamma * np.sum(terms)
    g = np.broadcast_to(-gamma * prior * _dflog(hbar) / N, probs.shape)
    return value, g


def mda_penalty(batch_probs: np.ndarray, gamma_d: float, prior: Sequence[float] | None = None) -> float:
    """gamma_d * KL(prior || batch-mean softmax), uniform prior by default."""
    probs = np.asarray(batch_probs, dtype=np.float64)
    if probs.shape[0] < 1:
        raise DataError("empty batch")
    return float(_mda(probs, gamma_d, prior)[0])


# --- LWCC -------------------------------------------------------------------


def _lwcc_betas(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    pred = np.argmax(probs, axis=1)  # ties go to the smaller class index
    return np.where(pred == labels, 1.0 - probs.max(axis=1), 1.0)


def lwcc_beta(prob_row: np.ndarray, label: int) -> float:
    """1 for a wrong prediction, 1 - confidence for a correct one."""
    row = np.asarray(prob_row, dtype=np.float64)[None, :]
    return float(_lwcc_betas(row, np.array([label]))[0])


def _lwcc(probs, labels, beta=None):
    N = probs.shape[0]
    b = _lwcc_betas(probs, labels) if beta is None else _pinned(beta, N)
    ce, gce = _ce_rows(probs, labels)
    kl, gkl = _kl_rows(probs)
    value = (ce + b * kl).mean()
    g = (gce + b[:, None] * gkl) / N
    return value, g


def lwcc_loss(probs: np.ndarray, labels: np.ndarray, beta=None) -> float:
    return float(_lwcc(np.asarray(probs, dtype=np.float64), np.asarray(labels), beta)[0])


def lwcc_si_loss(stoch_preds: np.ndarray, labels: np.ndarray, beta=None) -> float:
    """LWCC evaluated on the per-sample mean of T stochastic passes."""
    stack = np.asarray(stoch_preds, dtype=np.float64)
    return float(_lwcc(_mean_pass(stack), np.asarray(labels), beta)[0])


# --- normalized bin assignment ----------------------------------------------


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _soft_hist(conf: np.ndarray, B: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Soft counts (B,) and their Jacobian d count_b / d conf_i, shape (N, B).

    A sample's contribution to bin b is sigma((c - lo_b)/h) - sigma((c - hi_b)/h).
    The outer edges are open (lo_1 = -inf, hi_B = +inf), so each sample
    contributes exactly 1 in total.
    """
    edges = np.arange(B + 1) / B
    u = (conf[:, None] - edges[None, 1:-1]) / h  # (N, B-1) interior edges
    s = _sigmoid(u)
    ds = s * (1.0 - s) / h
    n = conf.shape[0]
    lo = np.hstack([np.ones((n, 1)), s])
    hi = np.hstack([s, np.zeros((n, 1))])
    dlo = np.hstack([np.zeros((n, 1)), ds])
    dhi = np.hstack([ds, np.zeros((n, 1))])
    return (lo - hi).sum(axis=0), dlo - dhi


def soft_histogram(confidences: np.ndarray, B: int, bandwidth: float) -> np.ndarray:
    if B < 2:
        raise ConfigError("need at least 2 bins")
    if not bandwidth > 0.0:
        raise ConfigError("bandwidth must be > 0")
    return _soft_hist(np.asarray(confidences, dtype=np.float64), B, bandwidth)[0]


def _nba(probs, gamma, B, h, weights):
    N = probs.shape[0]
    pred = np.argmax(probs, axis=1)
    conf = probs[np.arange(N), pred]
    counts, jac = _soft_hist(conf, B, h)
    d = counts / N - 1.0 / B
    root = np.sqrt(d * d + ABS_SMOOTH**2)
    value = gamma * np.sum(weights * (root - ABS_SMOOTH))
    dcounts = gamma * weights * (d / root) / N
    g = np.zeros_like(probs)
    g[np.arange(N), pred] = jac @ dcounts
    return value, g


def nba_penalty(probs: np.ndarray, spec: StrategySpec) -> float:
    """gamma_n * sum_b w_b |soft_count_b / N - 1/B| with a smoothed absolute value."""
    probs = np.asarray(probs, dtype=np.float64)
    return float(_nba(probs, spec.gamma_n, spec.nba_bins, spec.nba_bandwidth, spec.bin_weights())[0])


# --- dispatch -----------------------------------------------------------------


def objective(spec: StrategySpec, passes: Sequence[np.ndarray], batch: Batch) -> tuple[float, list[np.ndarray]]:
    """Loss of the active strategy and its gradient w.r.t. each pass's probabilities.

    ``passes`` holds one probability matrix for deterministic strategies and T
    of them for the stochastic ones. Mixup expects ``batch`` to be mixed already.
    """
    kind = spec.kind
    if kind in STOCHASTIC:
        stack = np.stack(passes)
        T = stack.shape[0]
        if kind == "vwcc":
            value, g, _ = _vwcc(stack, batch.labels, spec.vwcc_alpha_complement, spec.alpha_override)
        else:
            value, g = _lwcc(_mean_pass(stack), batch.labels, spec.beta_override)
        return value, [g if T == 1 else g / T] * T

    (probs,) = passes
    if kind == "lwcc":
        value, g = _lwcc(probs, batch.labels, spec.beta_override)
        return value, [g]
    value, g = _cross_entropy(probs, batch.targets)
    if kind == "mda":
        pv, pg = _mda(probs, spec.gamma_d, spec.mda_prior)
        value, g = value + pv, g + pg
    elif kind == "nba":
        pv, pg = _nba(probs, spec.gamma_n, spec.nba_bins, spec.nba_bandwidth, spec.bin_weights())
        value, g = value + pv, g + pg
    return value, [g]
