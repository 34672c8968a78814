import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lthcal import calib
from lthcal.calib import (
    Batch,
    StrategySpec,
    bhattacharyya,
    cross_entropy,
    kl_uniform,
    lwcc_beta,
    lwcc_loss,
    lwcc_si_loss,
    mda_penalty,
    mixup_batch,
    nba_penalty,
    soft_histogram,
    v_shaped_weights,
    vwcc_alpha,
    vwcc_loss,
)
from lthcal.errors import ConfigError, DataError
from lthcal.rng import make_rng

from oracles import (
    brute_bc,
    brute_ce,
    brute_kl_uniform,
    brute_lwcc,
    brute_mda,
    brute_nba_hard,
    brute_vwcc,
    brute_vwcc_alpha,
    hard_histogram,
    random_predictions,
)


def rows_with_confidence(conf, K):
    """Probability rows whose maximum (at class 0) equals ``conf``."""
    conf = np.asarray(conf, dtype=float)
    rest = (1.0 - conf) / (K - 1)
    out = np.repeat(rest[:, None], K, axis=1)
    out[:, 0] = conf
    return out


# --- cross entropy / KL / BC ------------------------------------------------------


def test_ce_examples():
    assert cross_entropy(np.eye(3), np.arange(3)) <= 1e-11
    assert cross_entropy(np.full((4, 10), 0.1), np.arange(4)) == pytest.approx(math.log(10), abs=1e-12)
    with pytest.raises(DataError):
        cross_entropy(np.full((1, 3), 1 / 3), np.array([3]))


@given(st.integers(0, 2**20), st.integers(1, 20), st.integers(2, 8))
@settings(max_examples=50, deadline=None)
def test_ce_oracle(seed, N, K):
    rng = np.random.default_rng(seed)
    probs, labels = random_predictions(rng, N, K)
    assert abs(cross_entropy(probs, labels) - brute_ce(probs, labels)) <= 1e-12
    soft = rng.dirichlet(np.ones(K), size=N)
    assert abs(cross_entropy(probs, soft) - brute_ce(probs, soft)) <= 1e-12


def test_kl_examples():
    assert kl_uniform(np.full(5, 0.2)) == pytest.approx(0.0, abs=1e-15)
    mpmath.mp.dps = 40
    half = mpmath.mpf(1) / 2
    ref = half * mpmath.log(half / mpmath.mpf("0.9")) + half * mpmath.log(half / mpmath.mpf("0.1"))
    assert kl_uniform(np.array([0.9, 0.1])) == pytest.approx(float(ref), abs=1e-15)


@given(st.integers(0, 2**20), st.integers(2, 12))
@settings(max_examples=50, deadline=None)
def test_kl_nonnegative_and_oracle(seed, K):
    p = np.random.default_rng(seed).dirichlet(np.full(K, 0.3))
    v = kl_uniform(p)
    assert v >= 0.0
    assert abs(v - brute_kl_uniform(p)) <= 1e-12


def test_bhattacharyya_examples():
    p = np.array([0.2, 0.3, 0.5])
    assert bhattacharyya(p, p) == pytest.approx(1.0, abs=1e-15)
    assert bhattacharyya([0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5]) == 0.0
    assert bhattacharyya([0.5, 0.5], [1.0, 0.0]) == pytest.approx(math.sqrt(0.5), abs=1e-15)


@given(st.integers(0, 2**20), st.integers(2, 10))
@settings(max_examples=50, deadline=None)
def test_bhattacharyya_range(seed, K):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(K)), rng.dirichlet(np.ones(K))
    bc = bhattacharyya(p, q)
    assert 0.0 <= bc <= 1.0
    assert abs(bc - brute_bc(p, q)) <= 1e-12


# --- VWCC ------------------------------------------------------------------------


def test_vwcc_alpha_examples():
    assert vwcc_alpha(np.tile([0.2, 0.8], (5, 1))) == pytest.approx(0.0, abs=1e-15)
    assert vwcc_alpha(np.array([[1.0, 0.0], [0.0, 1.0]])) == pytest.approx(1 - math.sqrt(0.5), abs=1e-15)
    # the literal orientation is available behind the flag
    assert vwcc_alpha(np.array([[1.0, 0.0], [0.0, 1.0]]), complement=False) == pytest.approx(math.sqrt(0.5))


@given(st.integers(0, 2**20))
@settings(max_examples=50, deadline=None)
def test_vwcc_alpha_oracle(seed):
    rows = np.random.default_rng(seed).dirichlet(np.ones(4), size=5)
    a = vwcc_alpha(rows)
    assert 0.0 <= a <= 1.0
    assert abs(a - brute_vwcc_alpha(rows)) <= 1e-12


def test_vwcc_loss_examples():
    stack = np.tile(np.eye(3)[None], (4, 1, 1))
    assert vwcc_loss(stack, np.arange(3)) <= 1e-11
    rng = np.random.default_rng(0)
    stack = rng.dirichlet(np.ones(3), size=(4, 2))
    mean = stack.mean(axis=0)
    want = np.mean([kl_uniform(mean[i]) for i in range(2)])
    assert vwcc_loss(stack, np.array([0, 1]), alpha=1.0) == pytest.approx(want, abs=1e-15)


@given(st.integers(0, 2**20), st.integers(1, 6), st.integers(1, 8))
@settings(max_examples=50, deadline=None)
def test_vwcc_loss_oracle(seed, T, N):
    stack = np.random.default_rng(seed).dirichlet(np.ones(4), size=(T, N))
    labels = np.random.default_rng(seed + 1).integers(0, 4, size=N)
    assert abs(vwcc_loss(stack, labels) - brute_vwcc(stack, labels)) <= 1e-12


# --- mixup -------------------------------------------------------------------------


def test_mixup_lambda_one_is_identity():
    b = Batch(np.random.default_rng(0).random((5, 3)), np.array([0, 1, 2, 1, 0]))
    out = mixup_batch(b, 0.2, make_rng(0, 0), lam=1.0, num_classes=3)
    assert np.array_equal(out.inputs, b.inputs)
    assert np.array_equal(out.soft_labels, np.eye(3)[b.labels])


def test_mixup_midpoint():
    b = Batch(np.array([[0.0, 2.0], [2.0, 0.0]]), np.array([0, 1]))
    swapped = 0
    for seed in range(20):
        out = mixup_batch(b, 0.2, make_rng(seed, 0), lam=0.5, num_classes=2)
        if np.array_equal(out.inputs, [[1.0, 1.0], [1.0, 1.0]]):
            swapped += 1
            assert np.array_equal(out.soft_labels, np.full((2, 2), 0.5))
        else:
            assert np.array_equal(out.inputs, b.inputs)  # identity permutation
    assert swapped > 0


def test_mixup_draws():
    # one-hot inputs reveal each sample's partner and mixing weight
    n = 1000
    lams = []
    for seed in range(100):
        b = Batch(np.eye(n), np.arange(n) % 10)
        out = mixup_batch(b, 0.2, make_rng(seed, 0), num_classes=10)
        x = out.inputs
        lam = np.diag(x).copy()
        off = x - np.diag(lam)
        # a row equal to e_i hides its partner (self-pairing, or a draw that rounded to 1.0)
        seen = off.max(axis=1) > 0
        partner = off.argmax(axis=1)[seen]
        assert np.unique(partner).size == partner.size
        lams.append(lam[seen])
        np.testing.assert_allclose(out.soft_labels.sum(axis=1), 1.0, atol=1e-12)
    lams = np.concatenate(lams)
    assert len(lams) > 90_000
    se = lams.std(ddof=1) / math.sqrt(len(lams))
    assert abs(lams.mean() - 0.5) <= 3 * se
    # Beta(0.2, 0.2) variance is 1 / (4 (2 alpha + 1)) = 0.178...
    assert lams.var() == pytest.approx(1 / (4 * 1.4), rel=0.02)


def test_mixup_errors():
    with pytest.raises(DataError):
        mixup_batch(Batch(np.zeros((1, 2)), np.array([0])), 0.2, make_rng(0, 0))
    with pytest.raises(ConfigError):
        mixup_batch(Batch(np.zeros((2, 2)), np.array([0, 1])), 0.0, make_rng(0, 0))


# --- MDA -------------------------------------------------------------------------


def test_mda_examples():
    probs = np.array([[0.3, 0.7], [0.7, 0.3]])
    assert mda_penalty(probs, 0.05) == pytest.approx(0.0, abs=1e-15)
    onehot = np.array([[0.0, 1.0], [0.0, 1.0]])
    want = 0.05 * (0.5 * math.log(0.5 / 1e-12) + 0.5 * math.log(0.5 / 1.0))
    assert mda_penalty(onehot, 0.05) == pytest.approx(want, rel=1e-14)
    rng = np.random.default_rng(0)
    assert mda_penalty(rng.dirichlet(np.ones(4), size=7), 0.0) == 0.0


@given(st.integers(0, 2**20), st.integers(1, 12), st.integers(2, 6), st.floats(0.0, 2.0))
@settings(max_examples=50, deadline=None)
def test_mda_oracle(seed, N, K, gamma):
    rng = np.random.default_rng(seed)
    probs = rng.dirichlet(np.ones(K), size=N)
    prior = rng.dirichlet(np.ones(K))
    assert abs(mda_penalty(probs, gamma) - brute_mda(probs, gamma)) <= 1e-12
    assert abs(mda_penalty(probs, gamma, prior) - brute_mda(probs, gamma, prior)) <= 1e-12


# --- LWCC -------------------------------------------------------------------------


def test_lwcc_beta_examples():
    assert lwcc_beta([0.2, 0.8], 0) == 1.0
    assert lwcc_beta([0.05, 0.9, 0.05], 1) == pytest.approx(0.1)
    assert lwcc_beta([0.0, 1.0], 1) == 0.0
    # ties resolve to the smaller index
    assert lwcc_beta([0.5, 0.5], 0) == 0.5 and lwcc_beta([0.5, 0.5], 1) == 1.0


def test_lwcc_loss_examples():
    assert lwcc_loss(np.eye(4), np.arange(4)) <= 1e-11
    K = 5
    assert lwcc_loss(np.full((3, K), 1 / K), np.array([1, 2, 3])) == pytest.approx(math.log(K), abs=1e-12)


@given(st.integers(0, 2**20), st.integers(1, 12), st.integers(2, 6))
@settings(max_examples=50, deadline=None)
def test_lwcc_oracle(seed, N, K):
    probs, labels = random_predictions(np.random.default_rng(seed), N, K)
    assert abs(lwcc_loss(probs, labels) - brute_lwcc(probs, labels)) <= 1e-12


def test_lwcc_si():
    rng = np.random.default_rng(3)
    one = rng.dirichlet(np.ones(3), size=(1, 6))
    labels = rng.integers(0, 3, size=6)
    assert lwcc_si_loss(one, labels) == lwcc_loss(one[0], labels)
    same = np.repeat(one, 4, axis=0)
    assert lwcc_si_loss(same, labels) == pytest.approx(lwcc_loss(one[0], labels), abs=1e-15)
    stack = rng.dirichlet(np.ones(3), size=(5, 6))
    assert abs(lwcc_si_loss(stack, labels) - brute_lwcc(stack.mean(axis=0), labels)) <= 1e-12


# --- soft histogram and NBA ---------------------------------------------------------


@pytest.mark.parametrize("B", [2, 3])
def test_soft_histogram_bin_center(B):
    for b in range(B):
        counts = soft_histogram(np.array([(b + 0.5) / B]), B, 0.01)
        want = np.eye(B)[b]
        assert np.abs(counts - want).max() <= 1e-6


def test_soft_histogram_total():
    conf = np.random.default_rng(0).uniform(0.1, 0.9, size=257)
    for B in (2, 10, 15):
        assert abs(soft_histogram(conf, B, 0.05).sum() - conf.size) <= 1e-6


@given(st.integers(0, 2**20), st.sampled_from([5, 10, 15]))
@settings(max_examples=30, deadline=None)
def test_soft_histogram_tracks_hard_counts(seed, B):
    conf = np.random.default_rng(seed).uniform(0.05, 0.95, size=1000)
    soft = soft_histogram(conf, B, 0.001)
    hard = hard_histogram(conf, B)
    assert np.abs(soft - hard).max() / conf.size <= 0.01


def test_soft_histogram_errors():
    with pytest.raises(ConfigError):
        soft_histogram(np.array([0.5]), 1, 0.1)
    with pytest.raises(ConfigError):
        soft_histogram(np.array([0.5]), 4, 0.0)


def test_v_weights():
    assert v_shaped_weights(10).tolist() == pytest.approx([2.0, 16 / 9, 14 / 9, 12 / 9, 10 / 9, 10 / 9, 12 / 9, 14 / 9, 16 / 9, 2.0])
    assert v_shaped_weights(2).tolist() == [2.0, 2.0]


def test_nba_flat_histogram_is_near_zero():
    B, K = 10, 20
    conf = (np.arange(B) + 0.5) / B  # one confidence at each bin center
    spec = StrategySpec(kind="nba", nba_bandwidth=0.001)
    assert 0.0 <= nba_penalty(rows_with_confidence(conf, K), spec) <= spec.gamma_n * B * 1e-6


def test_nba_all_in_one_bin():
    spec = StrategySpec(kind="nba", nba_bins=2, nba_weights=(1.0, 1.0), nba_bandwidth=0.001, gamma_n=0.1)
    probs = rows_with_confidence(np.full(8, 0.9), 3)
    assert nba_penalty(probs, spec) == pytest.approx(0.1, abs=1e-6)


# one confidence sitting on an edge moves half a count, so the batch must be a few hundred samples
@given(st.integers(0, 2**20), st.integers(500, 2000))
@settings(max_examples=30, deadline=None)
def test_nba_tracks_hard_oracle(seed, N):
    probs, _ = random_predictions(np.random.default_rng(seed), N, 10)
    spec = StrategySpec(kind="nba", nba_bandwidth=0.001)
    want = brute_nba_hard(probs, spec.gamma_n, spec.nba_bins, spec.bin_weights())
    assert abs(nba_penalty(probs, spec) - want) <= 1e-3


def test_strategy_validation():
    for bad in (
        dict(kind="focal"),
        dict(T=0),
        dict(mixup_alpha=0.0),
        dict(nba_bins=1),
        dict(nba_bandwidth=0.0),
        dict(gamma_n=-1.0),
        dict(nba_bins=3, nba_weights=(1.0, 1.0)),
        dict(nba_weights=(0.0,) * 10),
        dict(alpha_override=1.5),
    ):
        with pytest.raises(ConfigError):
            StrategySpec(**bad)


# --- properties across strategies ---------------------------------------------------


def _loss(kind, stack, labels, **kw):
    spec = StrategySpec(kind=kind, **kw)
    passes = list(stack) if spec.stochastic else [stack[0]]
    return calib.objective(spec, passes, Batch(np.zeros((len(labels), 1)), labels))[0]


@given(st.integers(0, 2**20), st.sampled_from([k for k in calib.KINDS if k != "mixup"]))
@settings(max_examples=60, deadline=None)
def test_losses_nonnegative_finite_and_permutation_invariant(seed, kind):
    rng = np.random.default_rng(seed)
    T, N, K = 3, 9, 4
    stack = rng.dirichlet(np.full(K, 0.5), size=(T, N))
    stack[0, 0] = np.eye(K)[0]  # include a saturated row
    labels = rng.integers(0, K, size=N)
    v = _loss(kind, stack, labels)
    assert np.isfinite(v) and v >= 0.0
    perm = rng.permutation(N)
    assert _loss(kind, stack[:, perm], labels[perm]) == pytest.approx(v, rel=1e-12, abs=1e-15)


@given(st.integers(0, 2**20))
@settings(max_examples=40, deadline=None)
def test_zeroed_weights_reduce_to_ce(seed):
    rng = np.random.default_rng(seed)
    stack = rng.dirichlet(np.ones(5), size=(1, 7))
    labels = rng.integers(0, 5, size=7)
    ce = cross_entropy(stack[0], labels)
    assert abs(_loss("vwcc", stack, labels, alpha_override=0.0) - ce) <= 1e-12
    assert abs(_loss("lwcc", stack, labels, beta_override=0.0) - ce) <= 1e-12
    assert abs(_loss("lwcc_si", stack, labels, beta_override=0.0) - ce) <= 1e-12
    assert abs(_loss("mda", stack, labels, gamma_d=0.0) - ce) <= 1e-12
    assert abs(_loss("nba", stack, labels, gamma_n=0.0) - ce) <= 1e-12


@given(st.integers(0, 2**20))
@settings(max_examples=40, deadline=None)
def test_weights_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    stack = rng.dirichlet(np.full(4, 0.3), size=(5, 10))
    labels = rng.integers(0, 4, size=10)
    a = calib._vwcc_alphas(stack)
    b = calib._lwcc_betas(stack[0], labels)
    assert np.all((a >= 0) & (a <= 1)) and np.all((b >= 0) & (b <= 1))
