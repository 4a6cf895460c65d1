"""Round-to-nearest-even emulation of 16-bit float formats in fp64.

Rounding goes straight from fp64 (no intermediate fp32), overflow saturates
to the format maximum and subnormal results flush to signed zero.
"""

from __future__ import annotations

import enum

import numpy as np


class PrecisionTag(enum.Enum):
    HIGH_RANGE_16 = "hr16"  # 8-bit exponent, 7-bit mantissa (bfloat16 layout)
    HIGH_PREC_16 = "hp16"  # 5-bit exponent, 10-bit mantissa (IEEE half layout)
    FULL_64 = "fp64"


def _format_limits(exp_bits: int, man_bits: int):
    emax = 2 ** (exp_bits - 1) - 1
    emin = 1 - emax
    fmax = (2.0 - 2.0**-man_bits) * 2.0**emax
    return emin, fmax


def quantize(x, exp_bits: int, man_bits: int):
    """Round ``x`` to the given binary format; returns float for scalars."""
    arr = np.asarray(x, dtype=np.float64)
    emin, fmax = _format_limits(exp_bits, man_bits)
    _, exp = np.frexp(arr)  # arr = mant * 2**exp, 0.5 <= |mant| < 1
    # below the normal range the spacing is fixed at the subnormal step
    step_exp = np.maximum(exp - 1, emin) - man_bits
    q = np.ldexp(np.rint(np.ldexp(arr, -step_exp)), step_exp)
    q = np.where(np.abs(q) < 2.0**emin, 0.0 * np.sign(arr), q)
    q = np.clip(q, -fmax, fmax)
    q = np.where(arr == 0.0, arr, q)
    return float(q) if q.ndim == 0 else q


def quantize_hr16(x):
    return quantize(x, 8, 7)


def quantize_hp16(x):
    return quantize(x, 5, 10)


def assign_precision(scores, tau: float) -> list:
    """HR16 where the score exceeds ``tau`` (trainable), HP16 otherwise (frozen)."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    s = np.asarray(getattr(scores, "scores", scores), dtype=np.float64).ravel()
    return [PrecisionTag.HIGH_RANGE_16 if v > tau else PrecisionTag.HIGH_PREC_16 for v in s]


def quantize_tagged(x, tags) -> np.ndarray:
    """Apply each entry's tag; the result keeps ``x``'s shape."""
    arr = np.asarray(x, dtype=np.float64)
    flat = arr.ravel()
    codes = np.array([t.value for t in tags])
    if codes.size != flat.size:
        raise ValueError("one tag per entry required")
    out = flat.copy()
    hr = codes == PrecisionTag.HIGH_RANGE_16.value
    hp = codes == PrecisionTag.HIGH_PREC_16.value
    out[hr] = quantize_hr16(flat[hr])
    out[hp] = quantize_hp16(flat[hp])
    return out.reshape(arr.shape)


def frozen_mask(tags) -> np.ndarray:
    """1.0 where gradients flow, 0.0 for HP16 (frozen) entries."""
    return np.array([0.0 if t is PrecisionTag.HIGH_PREC_16 else 1.0 for t in tags])
