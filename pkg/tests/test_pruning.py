import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from muonad.pruning import (ImportanceScores, PruneConfig, PruneMask, attention_entropy,
                            binarize_mask, channel_importance, keep_layers, memory_eff,
                            retention_schedule, select_channels)

pos = st.floats(0.0, 10.0, allow_nan=False)


def test_entropy_examples():
    assert attention_entropy(np.full((4, 4), 0.25)) == pytest.approx(math.log(4), abs=1e-15)
    assert attention_entropy(np.eye(3)) == 0.0
    assert attention_entropy([[0.5, 0.25, 0.25]]) == pytest.approx(1.5 * math.log(2), abs=1e-15)
    with pytest.raises(ValueError):
        attention_entropy([[0.5, 0.6]])


@given(arrays(np.float64, (3, 5), elements=st.floats(0.01, 1)))
def test_entropy_bounded(raw):
    p = raw / raw.sum(axis=1, keepdims=True)
    assert 0 <= attention_entropy(p) <= math.log(5) + 1e-9


def test_keep_layers_examples():
    assert keep_layers([1.0, 0.6, 0.8], 0.7).bits == (1, 0, 1)
    assert keep_layers([0.9, 0.9, 0.9], 0.7).bits == (1, 1, 1)
    assert keep_layers([0.9, 0.9], 1.0).bits == (1, 1)
    assert keep_layers([0.3], 0.7).bits == (1,)
    with pytest.raises(ValueError):
        keep_layers([], 0.7)


@given(st.lists(st.floats(0.01, 5), min_size=1, max_size=8), st.floats(0.01, 100))
def test_keep_layers_scale_invariant(h, a):
    if keep_layers(h).bits != keep_layers([a * x for x in h]).bits:
        # only rounding at the exact threshold can differ
        h = np.array(h)
        assert np.any(np.isclose(h, 0.7 * h.max(), rtol=1e-12))


def test_importance_examples():
    cfg = PruneConfig(lambda_decay=0.1, epsilon=1e-300)
    s = channel_importance(np.zeros(2), np.zeros(2), ImportanceScores(), PruneConfig())
    np.testing.assert_array_equal(s.scores, [0.0, 0.0])
    s = channel_importance(np.array([3.0]), np.array([2.0]), ImportanceScores(), cfg)
    assert s.scores[0] == pytest.approx(1.4, abs=1e-15)
    state = ImportanceScores()
    cfg = PruneConfig(lambda_decay=0.2, window=4)
    for _ in range(10):
        state = channel_importance(np.array([-0.7, 2.0]), np.array([1.5, 0.0]), state, cfg)
    np.testing.assert_allclose(state.scores, [1 + 0.2 * 2.25, 1.0], atol=1e-9)
    assert len(state.grad_sq_window) == 4


def test_importance_window_mean_brute_force():
    rng = np.random.default_rng(0)
    cfg = PruneConfig(window=3, lambda_decay=0.05)
    state = ImportanceScores()
    hist = []
    w = rng.standard_normal(5)
    for _ in range(7):
        g = rng.standard_normal(5)
        hist.append(g)
        state = channel_importance(g, w, state, cfg)
        e = np.mean([h**2 for h in hist[-3:]], axis=0)
        np.testing.assert_allclose(state.scores, np.abs(g) / (np.sqrt(e) + 1e-8) + 0.05 * w**2,
                                   rtol=1e-14)
    with pytest.raises(ValueError):
        channel_importance(np.ones(2), np.ones(3), state, cfg)


@given(arrays(np.float64, 6, elements=st.floats(-5, 5)), arrays(np.float64, 6, elements=st.floats(-5, 5)))
def test_importance_nonnegative(g, w):
    s = channel_importance(g, w, ImportanceScores(), PruneConfig())
    assert np.all(s.scores >= 0)


def brute_mask(scores, k):
    n = len(scores)
    mu = sum(scores) / n
    sd = math.sqrt(sum((x - mu) ** 2 for x in scores) / n)
    return tuple(0 if x < mu + k * sd else 1 for x in scores)


def test_binarize_examples():
    assert binarize_mask([1, 2, 3, 4], 0).bits == (0, 0, 1, 1)
    assert sum(binarize_mask([1, 2, 3, 4], 10).bits) == 0
    assert sum(binarize_mask([1, 2, 3, 4], -10).bits) == 4
    with pytest.raises(ValueError):
        binarize_mask([], 0)


@given(st.lists(st.integers(0, 1000), min_size=1, max_size=30), st.sampled_from([-1.5, 0.0, 0.5, 1.2]))
def test_binarize_matches_brute_force(ints, k):
    # dyadic values keep mean and std exact in both implementations
    s = [i / 8 for i in ints]
    got = binarize_mask(s, k).bits
    want = brute_mask(s, k)
    if got != want:
        mu, sd = np.mean(s), np.std(s)
        assert any(math.isclose(x, mu + k * sd, rel_tol=1e-12) for x in s)


@given(arrays(np.float64, 8, elements=st.floats(0, 10)), st.floats(-100, 100), st.floats(-2, 2))
def test_binarize_shift_invariant(s, c, k):
    a, b = binarize_mask(s, k).bits, binarize_mask(s + c, k).bits
    if a != b:
        assert np.any(np.isclose(s, s.mean() + k * s.std(), rtol=1e-9, atol=1e-9))


def test_retention_examples():
    assert retention_schedule(0, 3000) == 0.95
    assert retention_schedule(3000, 3000) == 0.40
    assert retention_schedule(1500, 3000) == pytest.approx(0.675, abs=1e-15)
    with pytest.raises(ValueError):
        retention_schedule(0, 0)


def test_memory_eff_examples():
    w = [np.ones((2, 3)), np.full(4, 2.0)]
    d, b = memory_eff([PruneMask((1,) * 6), PruneMask((1,) * 4)], w, 2, 2)
    assert (d, b) == (1.0, 40.0)
    assert memory_eff([PruneMask((0,) * 6), PruneMask((0,) * 4)], w) == (0.0, 0.0)
    d, _ = memory_eff([PruneMask((1, 0) * 3), PruneMask((0, 1) * 2)], w)
    assert d == 0.5
    with pytest.raises(ValueError):
        memory_eff([PruneMask((1,))], [np.ones(2)])


def test_memory_eff_brute_force_100():
    rng = np.random.default_rng(3)
    for _ in range(100):
        shapes = [tuple(rng.integers(1, 6, size=rng.integers(1, 3))) for _ in range(rng.integers(1, 4))]
        ws = [rng.integers(-1, 2, size=s).astype(float) for s in shapes]
        ms = [PruneMask(tuple(rng.integers(0, 2, size=int(np.prod(s))))) for s in shapes]
        nz = total = 0
        for m, w in zip(ms, ws):
            for bit, x in zip(m.bits, w.ravel()):
                nz += int(bit != 0 and x != 0)
                total += 1
        d, b = memory_eff(ms, ws, 2, 2)
        assert d == nz / total
        assert b == pytest.approx(4 * nz)


def test_mask_json_roundtrip_and_validation():
    m = PruneMask((1, 0, 1), "latent")
    assert PruneMask.from_json(m.to_json()).bits == m.bits
    assert m.to_json() == {"layer": "latent", "bits": [1, 0, 1]}
    with pytest.raises(ValueError):
        PruneMask((0, 2))


def test_select_channels_rules():
    s = np.array([5.0, 4.0, 3.0, 2.0, 1.0, 0.1, 0.0, 0.05])
    m = select_channels(s, 0.5, k=10.0, tau_imp=0.03)
    assert m.bits == (1, 1, 1, 1, 0, 0, 0, 0)
    # nothing below tau is kept even when the budget allows it
    m = select_channels(s, 1.0, k=10.0, tau_imp=0.03)
    assert m.bits == (1, 1, 1, 1, 1, 0, 0, 0)
    # entries above mean + k*std are kept beyond the budget
    m = select_channels(s, 0.1, k=-10.0, tau_imp=0.03)
    assert m.bits == (1, 1, 1, 1, 1, 0, 0, 0)


def test_prune_config_validation():
    for bad in [dict(beta=0.0), dict(epsilon=0.0), dict(window=0)]:
        with pytest.raises(ValueError):
            PruneConfig(**bad)
