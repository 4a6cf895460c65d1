"""Deterministic attention stack used as the distillation student and teacher.

Layers alternate self-attention (even index) and cross-attention to a fixed
context (odd index). Each layer is a single-head scaled dot-product attention
with a residual connection::

    self:  h' = h + softmax((h Wq)(h Wk)^T / sqrt(d)) (h Wv)
    cross: h' = h + softmax((h Wq)(C Wk)^T / sqrt(d)) (C Wv)

The stack input is ``z + P`` with a frozen positional table ``P``, so the
latent ``z`` is the only free variable. Parameters are drawn once from the
config seed and never trained.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import TensorError, draw_normal, make_rng, softmax_rows

SELF = "self"
CROSS = "cross"


class ShapeError(TensorError):
    pass


@dataclass(frozen=True)
class ToyModelConfig:
    num_layers: int = 6
    token_count: int = 8
    embed_dim: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.token_count < 2:
            raise ValueError("token_count must be >= 2")
        if self.embed_dim < 2:
            raise ValueError("embed_dim must be >= 2")

    @property
    def latent_shape(self) -> tuple[int, int]:
        return (self.token_count, self.embed_dim)


@dataclass(frozen=True, eq=False)
class ToyModel:
    cfg: ToyModelConfig
    positional: np.ndarray  # (n, d)
    context: np.ndarray  # (n, d), keys/values source for cross layers
    wq: np.ndarray  # (L, d, d)
    wk: np.ndarray
    wv: np.ndarray
    content_proj: np.ndarray  # (d, d), frozen feature map for the content loss

    @classmethod
    def from_config(cls, cfg: ToyModelConfig) -> "ToyModel":
        rng = make_rng(cfg.seed)
        n, d, L = cfg.token_count, cfg.embed_dim, cfg.num_layers
        s = 1.0 / math.sqrt(d)
        positional = draw_normal(rng, (n, d))
        context = draw_normal(rng, (n, d))
        wq = draw_normal(rng, (L, d, d)) * s
        wk = draw_normal(rng, (L, d, d)) * s
        wv = draw_normal(rng, (L, d, d)) * (0.5 * s)
        content_proj = draw_normal(rng, (d, d)) * s
        return cls(cfg, positional, context, wq, wk, wv, content_proj)

    def kind(self, layer: int) -> str:
        return SELF if layer % 2 == 0 else CROSS

    def with_zero_projections(self) -> "ToyModel":
        """Test hook: all query/key/value weights zeroed."""
        z = np.zeros_like(self.wq)
        return dataclasses.replace(self, wq=z, wk=z.copy(), wv=z.copy())


@dataclass(frozen=True, eq=False)
class AttentionMap:
    weights: np.ndarray
    active: bool = True


@dataclass(frozen=True, eq=False)
class ForwardTrace:
    attn_maps: list
    features: np.ndarray
    # per-layer intermediates needed by the backward pass
    _cache: list = field(default_factory=list, repr=False)

    @property
    def num_layers(self) -> int:
        return len(self.attn_maps)


def _check_latent(model: ToyModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != model.cfg.latent_shape:
        raise ShapeError(f"latent shape {z.shape} does not match {model.cfg.latent_shape}")
    return z


def _check_mask(model: ToyModel, layer_mask):
    if layer_mask is None:
        return None
    bits = [int(b) for b in layer_mask]
    if len(bits) != model.cfg.num_layers:
        raise ShapeError(f"mask length {len(bits)} != num_layers {model.cfg.num_layers}")
    return bits


def forward(model: ToyModel, z, layer_mask=None) -> ForwardTrace:
    z = _check_latent(model, z)
    bits = _check_mask(model, layer_mask)
    n, d = model.cfg.latent_shape
    scale = 1.0 / math.sqrt(d)
    uniform = np.full((n, n), 1.0 / n)

    h = z + model.positional
    maps, cache = [], []
    for l in range(model.cfg.num_layers):
        if bits is not None and not bits[l]:
            maps.append(AttentionMap(uniform.copy(), active=False))
            cache.append(None)
            continue
        src = h if model.kind(l) == SELF else model.context
        q = h @ model.wq[l]
        k = src @ model.wk[l]
        v = src @ model.wv[l]
        logits = (q @ k.T) * scale
        a = softmax_rows(logits)
        maps.append(AttentionMap(a))
        cache.append((h, q, k, v, logits))
        h = h + a @ v
    return ForwardTrace(maps, h, cache)


def _check_pair(teacher: ForwardTrace, student: ForwardTrace):
    if teacher.num_layers != student.num_layers:
        raise ShapeError("teacher and student layer counts differ")
    for t, s in zip(teacher.attn_maps, student.attn_maps):
        if t.weights.shape != s.weights.shape:
            raise ShapeError("attention map shapes differ")


def _row_kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    if np.any((q <= 0) & (p > 0)):
        raise ValueError("support mismatch")
    safe_p = np.where(p > 0, p, 1.0)
    safe_q = np.where(p > 0, q, 1.0)
    return np.sum(np.where(p > 0, p * (np.log(safe_p) - np.log(safe_q)), 0.0), axis=-1)


def distill_loss(teacher: ForwardTrace, student: ForwardTrace) -> float:
    """Mean over active student layers and their rows of KL(teacher row || student row)."""
    _check_pair(teacher, student)
    total = 0.0
    rows = 0
    for t, s in zip(teacher.attn_maps, student.attn_maps):
        if not s.active:
            continue
        total += float(np.sum(_row_kl(t.weights, s.weights)))
        rows += t.weights.shape[0]
    return total / rows if rows else 0.0


def content_loss(gen_features, content_features, projection=None) -> float:
    gen = np.asarray(gen_features, dtype=np.float64)
    tgt = np.asarray(content_features, dtype=np.float64)
    if gen.shape != tgt.shape:
        raise ShapeError(f"feature shapes differ: {gen.shape} vs {tgt.shape}")
    diff = gen - tgt
    if projection is not None:
        diff = diff @ projection
    return float(np.mean(diff * diff))


def total_loss(distill: float, content: float, lambda_content: float) -> float:
    if distill < 0 or content < 0 or lambda_content < 0:
        raise ValueError("losses and weight must be non-negative")
    return distill + lambda_content * content


@dataclass(frozen=True, eq=False)
class LossGrads:
    distill: float
    content: float
    grad_distill: np.ndarray
    grad_content: np.ndarray  # unweighted: gradient of content_loss alone
    trace: ForwardTrace


def _backward(model: ToyModel, trace: ForwardTrace, dlogits_extra: list, dfeatures: np.ndarray):
    d = model.cfg.embed_dim
    scale = 1.0 / math.sqrt(d)
    g = dfeatures
    for l in reversed(range(model.cfg.num_layers)):
        entry = trace._cache[l]
        if entry is None:
            continue
        h, q, k, v, _ = entry
        a = trace.attn_maps[l].weights
        da = g @ v.T
        dlogits = a * (da - np.sum(da * a, axis=1, keepdims=True))
        if dlogits_extra[l] is not None:
            dlogits = dlogits + dlogits_extra[l]
        dq = (dlogits @ k) * scale
        dh = g + dq @ model.wq[l].T
        if model.kind(l) == SELF:
            dv = a.T @ g
            dk = (dlogits.T @ q) * scale
            dh = dh + dv @ model.wv[l].T + dk @ model.wk[l].T
        g = dh
    return g


def loss_and_grads(model: ToyModel, z, teacher: ForwardTrace, content_target, layer_mask=None) -> LossGrads:
    """Both loss terms and their latent gradients from one forward pass.

    The KL gradient with respect to a student row's logits is
    ``(student_row - teacher_row) / (L_active * n)``; inactive layers are
    skipped by the loss and contribute no gradient.
    """
    trace = forward(model, z, layer_mask)
    _check_pair(teacher, trace)
    L = trace.num_layers
    active = sum(m.active for m in trace.attn_maps)
    norm = 1.0 / (max(active, 1) * model.cfg.token_count)

    distill = distill_loss(teacher, trace)
    extra = []
    for t, s in zip(teacher.attn_maps, trace.attn_maps):
        extra.append((s.weights - t.weights) * norm if s.active else None)
    zero = np.zeros_like(trace.features)
    g_distill = _backward(model, trace, extra, zero)

    target = np.asarray(content_target, dtype=np.float64)
    content = content_loss(trace.features, target, model.content_proj)
    diff = (trace.features - target) @ model.content_proj
    dfeat = (2.0 / diff.size) * diff @ model.content_proj.T
    g_content = _backward(model, trace, [None] * L, dfeat)
    return LossGrads(distill, content, g_distill, g_content, trace)


def grad_total(model: ToyModel, z, teacher: ForwardTrace, content_target, lambda_content: float,
               layer_mask=None) -> np.ndarray:
    lg = loss_and_grads(model, z, teacher, content_target, layer_mask)
    return lg.grad_distill + lambda_content * lg.grad_content


def objective(model: ToyModel, z, teacher: ForwardTrace, content_target, lambda_content: float,
              layer_mask=None) -> float:
    trace = forward(model, z, layer_mask)
    return total_loss(
        distill_loss(teacher, trace),
        content_loss(trace.features, content_target, model.content_proj),
        lambda_content,
    )
