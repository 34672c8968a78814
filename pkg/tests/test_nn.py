import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lthcal.errors import ConfigError, DimensionError, NumericError
from lthcal.nn import NetworkSpec, ParamSet, forward, init_network, softmax, stochastic_forward
from lthcal.optim import adam_state, optimizer_step
from lthcal.objective import loss_and_grad
from lthcal.calib import Batch, StrategySpec
from lthcal.pruning import Mask
from lthcal.rng import make_rng

from oracles import mp_forward, random_mask, random_net

dims_strategy = st.lists(st.integers(1, 6), min_size=1, max_size=3).map(lambda h: tuple(h) + (3,))


def test_init_is_deterministic():
    a = init_network(NetworkSpec((4, 3, 2), seed=7))
    b = init_network(NetworkSpec((4, 3, 2), seed=7))
    for x, y in zip(a.weights + a.biases, b.weights + b.biases):
        assert x.tobytes() == y.tobytes()


def test_lenet_shapes():
    p = init_network(NetworkSpec((784, 300, 100, 10)))
    assert [w.shape for w in p.weights] == [(300, 784), (100, 300), (10, 100)]
    assert [b.shape for b in p.biases] == [(300,), (100,), (10,)]


def test_init_snapshot_and_distribution():
    p = init_network(NetworkSpec((50, 40, 3), seed=1))
    for w, w0, b, b0 in zip(p.weights, p.init_weights, p.biases, p.init_biases):
        assert np.array_equal(w, w0) and np.array_equal(b, b0)
        assert not np.shares_memory(w, w0)
        assert np.all(b == 0.0)
    bound = np.sqrt(6.0 / (50 + 40))
    assert np.abs(p.weights[0]).max() <= bound
    # uniform on [-a, a] has variance a^2 / 3
    assert p.weights[0].var() == pytest.approx(bound**2 / 3, rel=0.05)


def test_snapshot_is_read_only():
    p = init_network(NetworkSpec((3, 2)))
    with pytest.raises(ValueError):
        p.init_weights[0][0, 0] = 1.0


@pytest.mark.parametrize("dims", [(5,), (), (3, 0, 2), (4, 1)])
def test_invalid_spec(dims):
    with pytest.raises(ConfigError):
        NetworkSpec(dims)


def test_invalid_dropout():
    with pytest.raises(ConfigError):
        NetworkSpec((3, 2), dropout_rate=1.0)


def test_zero_network_is_uniform():
    p = init_network(NetworkSpec((4, 5, 7)))
    for t in p.weights + p.biases:
        t[...] = 0.0
    probs, _ = forward(p, None, np.random.default_rng(0).random((3, 4)))
    assert np.array_equal(probs, np.full((3, 7), 1 / 7))


def test_forward_deterministic_without_dropout():
    p = random_net((6, 5, 3), 0)
    x = np.random.default_rng(1).random((4, 6))
    assert np.array_equal(forward(p, None, x)[0], forward(p, None, x)[0])


def test_forward_matches_extended_precision():
    p = random_net((6, 5, 4), 3, bias_scale=0.5)
    x = np.random.default_rng(2).normal(size=6)
    probs, _ = forward(p, None, x[None, :])
    ref = np.array([float(v) for v in mp_forward(p.weights, p.biases, x)])
    np.testing.assert_allclose(probs[0], ref, rtol=0, atol=1e-12)


def test_softmax_is_stable_for_large_logits():
    z = np.array([[1000.0, 999.0, -1000.0]])
    p = softmax(z)
    assert np.all(np.isfinite(p)) and abs(p.sum() - 1) < 1e-12


@given(dims_strategy, st.integers(0, 2**16), st.floats(0.05, 1.0))
@settings(max_examples=40, deadline=None)
def test_mask_absorption(hidden, seed, keep):
    dims = (4,) + hidden
    p = random_net(dims, seed)
    m = random_mask(p, keep, seed)
    absorbed = p.copy()
    for w, z in zip(absorbed.weights, m.layers):
        w *= z
    x = np.random.default_rng(seed).normal(size=(5, 4))
    assert np.array_equal(forward(p, m, x)[0], forward(absorbed, Mask.ones(p), x)[0])


@given(dims_strategy, st.integers(0, 2**16))
@settings(max_examples=40, deadline=None)
def test_rows_are_distributions(hidden, seed):
    p = random_net((4,) + hidden, seed, bias_scale=2.0)
    x = np.random.default_rng(seed).normal(0, 10, size=(6, 4))
    probs, _ = forward(p, None, x)
    assert np.all((probs >= 0) & (probs <= 1))
    assert np.all(np.abs(probs.sum(axis=1) - 1) <= 1e-9)


def test_forward_errors():
    p = random_net((3, 2), 0)
    with pytest.raises(DimensionError):
        forward(p, None, np.zeros((2, 4)))
    with pytest.raises(NumericError):
        forward(p, None, np.array([[0.0, np.nan, 1.0]]))
    with pytest.raises(DimensionError):
        forward(p, Mask([np.ones((3, 3), bool)]), np.zeros((1, 3)))


def test_stochastic_forward_rate_zero_warns_and_repeats():
    p = random_net((4, 6, 3), 0)
    x = np.random.default_rng(0).random((2, 4))
    with pytest.warns(UserWarning):
        outs = stochastic_forward(p, None, x, 4, make_rng(0, 0), rate=0.0)
    assert all(np.array_equal(outs[0], o) for o in outs)


def test_stochastic_forward_single_pass_equals_forward():
    p = random_net((4, 6, 3), 0)
    x = np.random.default_rng(0).random((2, 4))
    (one,) = stochastic_forward(p, None, x, 1, make_rng(5, 1), rate=0.3)
    ref, _ = forward(p, None, x, dropout_on=True, rng=make_rng(5, 1), rate=0.3)
    assert np.array_equal(one, ref)


def test_stochastic_forward_rejects_zero_passes():
    p = random_net((4, 3), 0)
    with pytest.raises(ConfigError):
        stochastic_forward(p, None, np.zeros((1, 4)), 0, make_rng(0, 0), rate=0.2)


def test_inverted_dropout_mean_matches_deterministic():
    p = random_net((5, 8, 3), 4, bias_scale=0.5)
    x = np.random.default_rng(3).random((1, 5))
    _, det = forward(p, None, x)
    rng = make_rng(11, 0)
    acts = np.stack([forward(p, None, x, dropout_on=True, rng=rng, rate=0.2)[1].post[0][0] for _ in range(1000)])
    se = acts.std(axis=0, ddof=1) / np.sqrt(len(acts))
    diff = np.abs(acts.mean(axis=0) - det.post[0][0])
    assert np.all(diff <= 3 * se + 1e-15)


def test_snapshot_survives_training():
    p = random_net((4, 5, 3), 0)
    snap = [w.copy() for w in p.init_weights] + [b.copy() for b in p.init_biases]
    m = Mask.ones(p)
    state = adam_state(p)
    batch = Batch(np.random.default_rng(0).random((6, 4)), np.arange(6) % 3)
    for _ in range(5):
        _, g = loss_and_grad(p, m, batch, StrategySpec(), make_rng(0, 2))
        optimizer_step(p, g, state, 1e-2, m)
    assert not np.array_equal(p.weights[0], snap[0])
    for a, b in zip(list(p.init_weights) + list(p.init_biases), snap):
        assert np.array_equal(a, b)


def test_paramset_shape_check():
    spec = NetworkSpec((3, 2))
    with pytest.raises(DimensionError):
        ParamSet(spec, [np.zeros((3, 2))], [np.zeros(2)])
