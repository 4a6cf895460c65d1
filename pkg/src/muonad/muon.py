"""Muon (momentum + Newton-Schulz orthogonalization) and an AdamW baseline."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .tensor import TensorError, frobenius_norm, rms

# Quintic coefficients from the public Muon recipe; they maximize the slope at
# zero but leave singular values oscillating in roughly [0.7, 1.2].
NS_COEFFS = (3.4445, -4.7750, 2.0315)
MAX_POLISH_STEPS = 12
RMS_FLOOR = 1e-3
STEP_SCALE = 0.2


def _polish(x: np.ndarray, tol: float) -> np.ndarray:
    """Cubic Newton-Schulz; converges quadratically once singular values are near 1."""
    eye = np.eye(x.shape[0])
    for _ in range(MAX_POLISH_STEPS):
        a = x @ x.T
        if np.linalg.norm(a - eye) <= tol:
            break
        x = 1.5 * x - 0.5 * (a @ x)
    return x


def newton_schulz_orthogonalize(g, steps: int = 5, polish: bool = True) -> np.ndarray:
    """Approximate the semi-orthogonal polar factor U V^T of ``g``.

    Runs ``steps`` quintic iterations on the Frobenius-normalized input, then
    (unless ``polish`` is False) cubic iterations until ``X X^T`` is within
    1e-12 of the identity or ``MAX_POLISH_STEPS`` is reached.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.ndim != 2 or min(g.shape) < 1:
        raise TensorError(f"expected a non-empty matrix, got shape {g.shape}")
    if steps < 1:
        raise ValueError("steps must be positive")
    norm = frobenius_norm(g)
    if norm == 0.0:
        raise ValueError("degenerate gradient")

    transposed = g.shape[0] > g.shape[1]
    x = g.T / norm if transposed else g / norm
    a, b, c = NS_COEFFS
    for _ in range(steps):
        gram = x @ x.T
        x = a * x + (b * gram + c * (gram @ gram)) @ x
    if polish:
        x = _polish(x, 1e-12 * math.sqrt(x.shape[0]))
    return np.ascontiguousarray(x.T if transposed else x)


@dataclass(frozen=True, eq=False)
class MuonState:
    momentum: np.ndarray
    momentum_coeff: float = 0.95
    step_count: int = 0
    ns_steps: int = 5

    def __post_init__(self):
        if not 0.0 <= self.momentum_coeff < 1.0:
            raise ValueError("momentum_coeff must be in [0, 1)")
        if self.ns_steps < 1:
            raise ValueError("ns_steps must be positive")

    @classmethod
    def zeros_like(cls, param, **kw) -> "MuonState":
        return cls(np.zeros_like(np.asarray(param, dtype=np.float64)), **kw)


def _check_step_args(state: MuonState, param, grad, lr: float):
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.ndim != 2:
        # orthogonalization is undefined for vectors/scalars; use adamw_step
        raise TensorError(f"Muon needs a matrix parameter, got shape {param.shape}")
    if grad.shape != param.shape or state.momentum.shape != param.shape:
        raise TensorError(f"shape mismatch: param {param.shape}, grad {grad.shape}, "
                          f"momentum {state.momentum.shape}")
    if not lr > 0:
        raise ValueError(f"lr must be positive, got {lr}")
    return param, grad


def _advance(state: MuonState, grad: np.ndarray):
    momentum = state.momentum_coeff * state.momentum + grad
    new_state = dataclasses.replace(state, momentum=momentum, step_count=state.step_count + 1)
    if not np.any(momentum):
        return None, new_state
    return newton_schulz_orthogonalize(momentum, state.ns_steps), new_state


def muon_step(state: MuonState, param, grad, lr: float):
    param, grad = _check_step_args(state, param, grad, lr)
    ortho, new_state = _advance(state, grad)
    if ortho is None:
        return param.copy(), new_state
    scale = STEP_SCALE * math.sqrt(max(param.shape))
    return param - lr * scale * ortho, new_state


def latent_update(z, grad, lr: float, state: MuonState):
    """Muon step on the latent with the update rescaled to ``lr * max(rms(z), RMS_FLOOR)``.

    Returns ``(new_z, new_state)``.
    """
    z, grad = _check_step_args(state, z, grad, lr)
    ortho, new_state = _advance(state, grad)
    if ortho is None:
        return z.copy(), new_state
    target = lr * max(rms(z), RMS_FLOOR)
    return z - ortho * (target / rms(ortho)), new_state


@dataclass(frozen=True, eq=False)
class AdamWState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0

    @classmethod
    def zeros_like(cls, param, **kw) -> "AdamWState":
        p = np.asarray(param, dtype=np.float64)
        return cls(np.zeros_like(p), np.zeros_like(p), **kw)


def adamw_step(state: AdamWState, param, grad, lr: float):
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape or state.first_moment.shape != param.shape:
        raise TensorError(f"shape mismatch: param {param.shape}, grad {grad.shape}")
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_param = param * (1.0 - lr * state.weight_decay) - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_param, dataclasses.replace(state, first_moment=m, second_moment=v, step_count=t)
