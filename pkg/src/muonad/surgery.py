"""Style/content gradient conflict handling.

All operations act on flattened gradients: one inner product per pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SurgeryConfig:
    conflict_threshold: float = -0.5
    gamma: float = 1.0

    def __post_init__(self):
        if not -1.0 <= self.conflict_threshold <= 0.0:
            raise ValueError("conflict_threshold must be in [-1, 0]")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")


@dataclass(frozen=True)
class ConflictReport:
    cos_theta: float
    conflicted: bool
    projected: bool


def _flat_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a.ravel(), b.ravel()


def _unit_scale(v: np.ndarray):
    """``(v / max|v|, max|v|)``; keeps squared norms clear of under/overflow."""
    m = float(np.abs(v).max()) if v.size else 0.0
    return (v / m if m > 0 else v), m


def cos_angle(g1, g2) -> float:
    a, b = _flat_pair(g1, g2)
    a, _ = _unit_scale(a)
    b, _ = _unit_scale(b)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("undefined angle")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def project_conflict(g_style, g_content, cfg: SurgeryConfig = SurgeryConfig()):
    """Remove the component of ``g_style`` along ``g_content`` when they conflict.

    Returns ``(gradient, ConflictReport)``. Non-conflicting inputs come back
    as the original array object.
    """
    s, c = _flat_pair(g_style, g_content)
    c, c_max = _unit_scale(c)
    if c_max == 0.0:
        raise ValueError("zero content gradient")
    if not np.any(s):
        return g_style, ConflictReport(0.0, False, False)
    cos = cos_angle(s, c)
    if cos >= cfg.conflict_threshold:
        return g_style, ConflictReport(cos, False, False)
    s, s_max = _unit_scale(s)
    c_sq = float(np.dot(c, c))
    out = s - (np.dot(s, c) / c_sq) * c
    # one refinement pass cancels the rounding left by the first subtraction
    out = out - (np.dot(out, c) / c_sq) * c
    return (out * s_max).reshape(np.shape(g_style)), ConflictReport(cos, True, True)


def latent_project(z, grad) -> np.ndarray:
    """Project ``grad`` onto the orthogonal complement of ``z``."""
    zf = np.asarray(z, dtype=np.float64).ravel()
    g = np.asarray(grad, dtype=np.float64)
    gf = g.ravel()
    if zf.size != gf.size:
        raise ValueError(f"size mismatch: {zf.size} vs {gf.size}")
    zf, z_max = _unit_scale(zf)
    if z_max == 0.0:
        raise ValueError("degenerate latent")
    gf, g_max = _unit_scale(gf)
    z_sq = float(np.dot(zf, zf))
    out = gf - (np.dot(zf, gf) / z_sq) * zf
    out = out - (np.dot(zf, out) / z_sq) * zf
    return (out * g_max).reshape(g.shape)


def balance_magnitudes(g_style, g_content, gamma: float) -> np.ndarray:
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    s, c = _flat_pair(g_style, g_content)
    c, c_max = _unit_scale(c)
    if c_max == 0.0:
        return np.zeros_like(np.asarray(g_style, dtype=np.float64))
    s, s_max = _unit_scale(s)
    if s_max == 0.0:
        raise ValueError("cannot orient zero gradient")
    # rescale the unit-max copy of g_style so its norm is gamma * |g_content|
    factor = gamma * c_max * np.linalg.norm(c) / np.linalg.norm(s)
    return (s * factor).reshape(np.shape(g_style))
