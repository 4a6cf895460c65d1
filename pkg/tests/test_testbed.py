import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from muonad.tensor import draw_normal, make_rng
from muonad.testbed import (CROSS, SELF, ShapeError, ToyModel, ToyModelConfig, content_loss,
                            distill_loss, forward, grad_total, loss_and_grads, objective,
                            total_loss)
from muonad.trainer import finite_difference_grad


def reference_forward(model, z, mask=None):
    """Straight-line loop evaluation, no vectorized softmax."""
    n, d = model.cfg.token_count, model.cfg.embed_dim
    h = [[z[i][j] + model.positional[i][j] for j in range(d)] for i in range(n)]
    maps = []
    for l in range(model.cfg.num_layers):
        if mask is not None and not mask[l]:
            maps.append([[1.0 / n] * n for _ in range(n)])
            continue
        src = h if l % 2 == 0 else model.context.tolist()

        def mat(x, w):
            return [[sum(x[i][k] * w[k][j] for k in range(d)) for j in range(d)] for i in range(len(x))]

        q, k, v = mat(h, model.wq[l]), mat(src, model.wk[l]), mat(src, model.wv[l])
        a = []
        for i in range(n):
            logits = [sum(q[i][t] * k[j][t] for t in range(d)) / math.sqrt(d) for j in range(n)]
            top = max(logits)
            e = [math.exp(x - top) for x in logits]
            s = sum(e)
            a.append([x / s for x in e])
        maps.append(a)
        h = [[h[i][j] + sum(a[i][m] * v[m][j] for m in range(n)) for j in range(d)] for i in range(n)]
    return maps, h


@pytest.fixture
def small():
    return ToyModel.from_config(ToyModelConfig(num_layers=3, token_count=4, embed_dim=5, seed=3))


def test_trace_shapes_row_stochastic():
    m = ToyModel.from_config(ToyModelConfig(2, 4, 4, seed=1))
    tr = forward(m, draw_normal(make_rng(2), (4, 4)))
    assert tr.num_layers == 2
    for a in tr.attn_maps:
        assert a.weights.shape == (4, 4)
        assert np.abs(a.weights.sum(axis=1) - 1).max() <= 1e-10


def test_zero_projections_give_uniform():
    m = ToyModel.from_config(ToyModelConfig(3, 5, 4, seed=1)).with_zero_projections()
    tr = forward(m, draw_normal(make_rng(2), (5, 4)))
    for a in tr.attn_maps:
        np.testing.assert_allclose(a.weights, 0.2, atol=1e-15)


def test_forward_matches_loop_reference_seed42_zero_latent():
    m = ToyModel.from_config(ToyModelConfig(seed=42))
    z = np.zeros(m.cfg.latent_shape)
    tr = forward(m, z)
    maps, h = reference_forward(m, z)
    for got, ref in zip(tr.attn_maps, maps):
        np.testing.assert_allclose(got.weights, ref, rtol=0, atol=1e-12)
    np.testing.assert_allclose(tr.features, h, rtol=0, atol=1e-12)


def test_forward_masked_matches_reference(small):
    z = draw_normal(make_rng(5), small.cfg.latent_shape)
    mask = [1, 0, 1]
    tr = forward(small, z, mask)
    maps, h = reference_forward(small, z, mask)
    assert [a.active for a in tr.attn_maps] == [True, False, True]
    for got, ref in zip(tr.attn_maps, maps):
        np.testing.assert_allclose(got.weights, ref, atol=1e-12)
    np.testing.assert_allclose(tr.features, h, atol=1e-12)


def test_layer_kinds(small):
    assert [small.kind(l) for l in range(3)] == [SELF, CROSS, SELF]


def test_forward_errors(small):
    with pytest.raises(ShapeError):
        forward(small, np.zeros((4, 4)))
    with pytest.raises(ShapeError):
        forward(small, np.zeros((4, 5)), layer_mask=[1, 1])


def test_config_validation():
    for bad in [dict(num_layers=0), dict(token_count=1), dict(embed_dim=1)]:
        with pytest.raises(ValueError):
            ToyModelConfig(**bad)


@given(st.integers(0, 2**32), st.integers(1, 4), st.integers(2, 6), st.integers(2, 6))
def test_maps_row_stochastic_property(seed, L, n, d):
    m = ToyModel.from_config(ToyModelConfig(L, n, d, seed))
    z = 3 * draw_normal(make_rng(seed + 1), (n, d))
    for a in forward(m, z).attn_maps:
        assert np.abs(a.weights.sum(axis=1) - 1).max() <= 1e-10
        assert np.all(a.weights > 0)


def _one_row_trace(row):
    from muonad.testbed import AttentionMap, ForwardTrace
    return ForwardTrace([AttentionMap(np.array([row]))], np.zeros((1, 1)))


def test_distill_examples():
    p, q = _one_row_trace([0.5, 0.5]), _one_row_trace([0.25, 0.75])
    assert distill_loss(p, p) == 0.0
    expected = 0.5 * math.log(2) + 0.5 * math.log(0.5 / 0.75)
    assert distill_loss(p, q) == pytest.approx(expected, abs=1e-15)
    assert expected == pytest.approx(0.5 * math.log(4 / 3), abs=1e-15)
    assert distill_loss(q, p) != pytest.approx(distill_loss(p, q), abs=1e-6)


def test_distill_support_and_shape_errors():
    with pytest.raises(ValueError, match="support mismatch"):
        distill_loss(_one_row_trace([0.5, 0.5]), _one_row_trace([1.0, 0.0]))
    with pytest.raises(ShapeError):
        distill_loss(_one_row_trace([0.5, 0.5]), _one_row_trace([0.2, 0.3, 0.5]))


def test_distill_zero_iff_identical(small):
    z = draw_normal(make_rng(1), small.cfg.latent_shape)
    t = forward(small, z)
    assert distill_loss(t, forward(small, z)) == 0.0
    assert distill_loss(t, forward(small, z + 0.1)) > 0


def test_content_loss_examples():
    a = draw_normal(make_rng(3), (4, 3))
    delta = draw_normal(make_rng(4), (4, 3))
    assert content_loss(a, a) == 0.0
    assert content_loss(a + delta, a, np.eye(3)) == pytest.approx(float(np.mean(delta**2)), rel=1e-12)
    assert content_loss(2.5 * (a + delta), 2.5 * a) == pytest.approx(6.25 * content_loss(a + delta, a))
    with pytest.raises(ShapeError):
        content_loss(a, a[:2])


def test_total_loss_examples():
    assert total_loss(0.3, 2.0, 0.0) == 0.3
    assert total_loss(0.5, 0.25, 0.8) == pytest.approx(0.7, abs=1e-15)
    assert total_loss(0.0, 0.0, 3.0) == 0.0
    with pytest.raises(ValueError):
        total_loss(-1, 0, 0)


def _fd_check(model, z, teacher, target, lam):
    g = grad_total(model, z, teacher, target, lam)
    fd = finite_difference_grad(lambda x: objective(model, x, teacher, target, lam), z, 1e-5)
    return np.abs(g - fd).max() / np.abs(fd).max()


def test_gradient_random_seed7_z11():
    m = ToyModel.from_config(ToyModelConfig(3, 6, 6, seed=7))
    z = draw_normal(make_rng(11), (6, 6))
    teacher = forward(m, draw_normal(make_rng(12), (6, 6)))
    target = forward(m, draw_normal(make_rng(13), (6, 6))).features
    assert _fd_check(m, z, teacher, target, 0.7) <= 1e-4


def test_gradient_with_layer_mask(small):
    z = draw_normal(make_rng(2), small.cfg.latent_shape)
    mask = [1, 0, 1]
    teacher = forward(small, draw_normal(make_rng(3), small.cfg.latent_shape), mask)
    target = forward(small, draw_normal(make_rng(4), small.cfg.latent_shape), mask).features
    g = grad_total(small, z, teacher, target, 0.5, mask)
    fd = finite_difference_grad(lambda x: objective(small, x, teacher, target, 0.5, mask), z)
    assert np.abs(g - fd).max() / np.abs(fd).max() <= 1e-4


def test_gradient_vanishes_at_optimum(small):
    z = draw_normal(make_rng(9), small.cfg.latent_shape)
    t = forward(small, z)
    assert np.linalg.norm(grad_total(small, z, t, t.features, 1.3)) <= 1e-8


def test_gradient_linear_in_lambda(small):
    z = draw_normal(make_rng(2), small.cfg.latent_shape)
    teacher = forward(small, draw_normal(make_rng(3), small.cfg.latent_shape))
    target = forward(small, draw_normal(make_rng(4), small.cfg.latent_shape)).features
    g0 = grad_total(small, z, teacher, target, 0.0)
    g1 = grad_total(small, z, teacher, target, 0.4)
    g2 = grad_total(small, z, teacher, target, 0.8)
    np.testing.assert_allclose(g2 - g0, 2 * (g1 - g0), rtol=1e-12, atol=1e-15)


def test_loss_and_grads_consistent(small):
    z = draw_normal(make_rng(2), small.cfg.latent_shape)
    teacher = forward(small, draw_normal(make_rng(3), small.cfg.latent_shape))
    target = forward(small, draw_normal(make_rng(4), small.cfg.latent_shape)).features
    lg = loss_and_grads(small, z, teacher, target)
    assert lg.distill + 0.5 * lg.content == pytest.approx(objective(small, z, teacher, target, 0.5))
