"""Entropy-driven layer masks, gradient-sensitivity channel scores and accounting."""

from __future__ import annotations

import dataclasses
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

RETENTION_START = 0.95
RETENTION_END = 0.40


@dataclass(frozen=True)
class PruneConfig:
    beta: float = 0.7
    k: float = 0.0
    lambda_decay: float = 0.01
    epsilon: float = 1e-8
    window: int = 16
    tau_imp: float = 0.03

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must be in (0, 1]")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.lambda_decay < 0:
            raise ValueError("lambda_decay must be non-negative")


@dataclass(eq=False)
class ImportanceScores:
    """Scores plus the sliding window of squared gradients that produced them."""

    scores: np.ndarray | None = None
    grad_sq_window: deque = field(default_factory=deque)

    def normalized(self) -> np.ndarray:
        if self.scores is None:
            raise ValueError("no scores yet")
        top = float(self.scores.max())
        return self.scores / top if top > 0 else np.zeros_like(self.scores)


@dataclass(frozen=True)
class PruneMask:
    bits: tuple
    name: str = ""

    def __post_init__(self):
        bits = tuple(int(b) for b in np.asarray(self.bits).ravel())
        if any(b not in (0, 1) for b in bits):
            raise ValueError("mask bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    def __len__(self):
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)

    def array(self, shape=None) -> np.ndarray:
        a = np.array(self.bits, dtype=np.float64)
        return a.reshape(shape) if shape is not None else a

    @property
    def kept(self) -> int:
        return sum(self.bits)

    def to_json(self) -> dict:
        return {"layer": self.name, "bits": list(self.bits)}

    @classmethod
    def from_json(cls, obj: dict) -> "PruneMask":
        return cls(tuple(obj["bits"]), obj.get("layer", ""))


def attention_entropy(weights) -> float:
    """Mean row entropy (nats) of a row-stochastic matrix."""
    p = np.asarray(getattr(weights, "weights", weights), dtype=np.float64)
    if p.ndim != 2 or p.size == 0:
        raise ValueError("expected a non-empty matrix")
    if np.any(p < 0) or np.any(np.abs(p.sum(axis=1) - 1.0) > 1e-6):
        raise ValueError("rows are not stochastic")
    plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return float(np.mean(-plogp.sum(axis=1)))


def keep_layers(entropies, beta: float = 0.7) -> PruneMask:
    h = np.asarray(entropies, dtype=np.float64)
    if h.size == 0:
        raise ValueError("empty input")
    if not 0.0 < beta <= 1.0:
        raise ValueError("beta must be in (0, 1]")
    thresh = beta * h.max()
    # with beta == 1 a strict test would drop every maximal layer
    keep = h >= thresh if beta == 1.0 else h > thresh
    return PruneMask(tuple(keep.astype(int)))


def channel_importance(grad, weights, state: ImportanceScores, cfg: PruneConfig) -> ImportanceScores:
    """Push ``grad**2`` into the window and rescore every entry.

    ``S = |g| / (sqrt(E[g^2]) + eps) + lambda_decay * W^2`` where ``E`` is
    the elementwise mean over the window.
    """
    g = np.asarray(grad, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    if g.shape != w.shape:
        raise ValueError(f"shape mismatch: grad {g.shape} vs weights {w.shape}")
    window = deque(state.grad_sq_window, maxlen=cfg.window)
    if window and window[0].shape != g.shape:
        raise ValueError("window state shape does not match gradient")
    window.append(g * g)
    mean_sq = np.mean(np.stack(window), axis=0)
    scores = np.abs(g) / (np.sqrt(mean_sq) + cfg.epsilon) + cfg.lambda_decay * w * w
    return ImportanceScores(scores, window)


def binarize_mask(scores, k: float) -> PruneMask:
    s = np.asarray(scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise ValueError("empty input")
    eta = s.mean() + k * s.std()
    return PruneMask(tuple((s >= eta).astype(int)))


def retention_schedule(iteration: int, total_iters: int,
                       start: float = RETENTION_START, end: float = RETENTION_END) -> float:
    if total_iters <= 0:
        raise ValueError("total_iters must be positive")
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    if iteration >= total_iters:
        return end
    r = start + (end - start) * (iteration / total_iters)
    lo, hi = min(start, end), max(start, end)
    return min(max(r, lo), hi)


def select_channels(scores, retention: float, k: float, tau_imp: float) -> PruneMask:
    """Mask for the trainer: keep ``ceil(retention * N)`` entries by score.

    Entries at or above ``mean + k*std`` are always kept (so density can
    exceed the schedule when ``k`` is negative); entries whose max-normalized
    score is below ``tau_imp`` are always dropped. Ties break by index.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    top = s.max()
    norm = s / top if top > 0 else np.zeros_like(s)
    protected = np.array(binarize_mask(s, k).bits, dtype=bool)
    eligible = norm >= tau_imp
    target = math.ceil(retention * s.size)
    keep = protected & eligible
    budget = target - int(keep.sum())
    if budget > 0:
        order = np.lexsort((np.arange(s.size), -s))
        for i in order:
            if budget == 0:
                break
            if eligible[i] and not keep[i]:
                keep[i] = True
                budget -= 1
    return PruneMask(tuple(keep.astype(int)))


def memory_eff(masks, weights, bytes_a: int = 2, bytes_b: int = 2):
    """``(density, bytes)``: nonzero fraction of mask*weight and its byte figure."""
    if bytes_a <= 0 or bytes_b <= 0:
        raise ValueError("byte sizes must be positive")
    masks, weights = list(masks), list(weights)
    if len(masks) != len(weights):
        raise ValueError("masks and weights differ in count")
    nonzero = 0
    total = 0
    for m, w in zip(masks, weights):
        w = np.asarray(w, dtype=np.float64)
        bits = m.array() if isinstance(m, PruneMask) else np.asarray(m, dtype=np.float64).ravel()
        if bits.size != w.size:
            raise ValueError(f"mask size {bits.size} != weight size {w.size}")
        nonzero += int(np.count_nonzero(bits * w.ravel()))
        total += w.size
    if total == 0:
        raise ValueError("no entries")
    density = nonzero / total
    return density, density * total * (bytes_a + bytes_b)


def with_name(mask: PruneMask, name: str) -> PruneMask:
    return dataclasses.replace(mask, name=name)
