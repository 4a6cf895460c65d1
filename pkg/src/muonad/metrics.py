"""Quality and efficiency metrics over toy textures, features and ledgers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

SSIM_WINDOW = 11
MCR_TAU = 0.05
ADF_ANGLES = (0.0, 45.0, 90.0)


def kl_divergence(p, q) -> float:
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise ValueError("distributions differ in length")
    if abs(p.sum() - 1.0) > 1e-9 or abs(q.sum() - 1.0) > 1e-9:
        raise ValueError("inputs must sum to 1")
    support = p > 0
    if np.any(q[support] <= 0):
        raise ValueError("support mismatch")
    ps, qs = p[support], q[support]
    return float(np.sum(ps * (np.log(ps) - np.log(qs))))


def _channels(x: np.ndarray):
    if x.ndim == 2:
        return [x]
    if x.ndim == 3:
        return [x[..., c] for c in range(x.shape[-1])]
    raise ValueError(f"expected (H, W) or (H, W, C), got {x.shape}")


def ssim(a, b, window: int = SSIM_WINDOW, data_range: float = 1.0) -> float:
    """Mean SSIM over every ``window x window`` position (uniform weights,
    population moments). Multi-channel inputs average over channels."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    if a.ndim < 2 or min(a.shape[:2]) < window:
        raise ValueError(f"image {a.shape} smaller than window {window}")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    vals = []
    for ca, cb in zip(_channels(a), _channels(b)):
        wa = sliding_window_view(ca, (window, window))
        wb = sliding_window_view(cb, (window, window))
        mu_a = wa.mean(axis=(-2, -1))
        mu_b = wb.mean(axis=(-2, -1))
        da = wa - mu_a[..., None, None]
        db = wb - mu_b[..., None, None]
        var_a = (da * da).mean(axis=(-2, -1))
        var_b = (db * db).mean(axis=(-2, -1))
        cov = (da * db).mean(axis=(-2, -1))
        num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
        den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
        vals.append(float(np.mean(num / den)))
    return float(np.mean(vals))


@dataclass(frozen=True, eq=False)
class GaussianFit:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        if cov.shape != (mu.size, mu.size):
            raise ValueError(f"covariance {cov.shape} does not match mean of size {mu.size}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance is not symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-10:
            raise ValueError("covariance is not positive semi-definite")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", cov)

    @classmethod
    def from_samples(cls, samples) -> "GaussianFit":
        x = np.asarray(samples, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError("need a (num_samples >= 2, dim) array")
        cov = np.cov(x, rowvar=False, bias=False)
        return cls(x.mean(axis=0), 0.5 * (np.atleast_2d(cov) + np.atleast_2d(cov).T))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(fit_a: GaussianFit, fit_b: GaussianFit) -> float:
    """``|mu_a - mu_b|^2 + tr(Sa + Sb - 2 (Sa Sb)^(1/2))``.

    The trace of the product root is taken as ``tr((Sa^½ Sb Sa^½)^½)``, which
    is a symmetric PSD eigenproblem with the same spectrum as ``Sa Sb``.
    """
    if fit_a.mean.shape != fit_b.mean.shape:
        raise ValueError("dimension mismatch")
    sa, sb = fit_a.covariance, fit_b.covariance
    root_a = _psd_sqrt(sa)
    inner = root_a @ sb @ root_a
    w = np.linalg.eigvalsh(0.5 * (inner + inner.T))
    scale = max(1.0, float(np.abs(w).max()))
    if w.min() < -1e-8 * scale:
        raise ValueError("product of covariances has negative eigenvalues")
    tr_root = float(np.sum(np.sqrt(np.clip(w, 0.0, None))))
    diff = fit_a.mean - fit_b.mean
    d = float(diff @ diff) + float(np.trace(sa) + np.trace(sb)) - 2.0 * tr_root
    return max(d, 0.0)


def _downsample_once(t: np.ndarray) -> np.ndarray:
    h, w = t.shape[:2]
    if h % 2:
        t = np.concatenate([t, t[-1:]], axis=0)
    if w % 2:
        t = np.concatenate([t, t[:, -1:]], axis=1)
    return 0.25 * (t[0::2, 0::2] + t[1::2, 0::2] + t[0::2, 1::2] + t[1::2, 1::2])


def mipmap_downsample(t, level: int) -> np.ndarray:
    """``level`` rounds of 2x2 box filtering; odd edges replicate the last row/column."""
    if level < 0:
        raise ValueError("level must be non-negative")
    out = np.asarray(t, dtype=np.float64)
    for _ in range(level):
        if out.shape[0] == 1 and out.shape[1] == 1:
            break
        out = _downsample_once(out)
    return out


@dataclass(frozen=True, eq=False)
class TextureAsset:
    base: np.ndarray
    mip_chain: tuple = field(default=())

    @classmethod
    def from_array(cls, base, levels: int = 4) -> "TextureAsset":
        b = np.asarray(base, dtype=np.float64)
        if b.ndim not in (2, 3):
            raise ValueError("texture must be (H, W) or (H, W, C)")
        if np.any(b < 0) or np.any(b > 1):
            raise ValueError("texture values must lie in [0, 1]")
        chain = [b]
        for _ in range(levels):
            chain.append(_downsample_once(chain[-1]))
        return cls(b, tuple(chain))

    def level(self, s: int) -> np.ndarray:
        if s < len(self.mip_chain):
            return self.mip_chain[s]
        return mipmap_downsample(self.base, s)


def _as_asset(x) -> TextureAsset:
    return x if isinstance(x, TextureAsset) else TextureAsset.from_array(x)


def _base(x) -> np.ndarray:
    # ndarray has its own ``.base`` attribute, so test the type explicitly
    return np.asarray(x.base if isinstance(x, TextureAsset) else x, dtype=np.float64)


def mcr_errors(gen, gt, level: int) -> list:
    """Relative L1 error per pair after downsampling both to ``level``."""
    gen, gt = list(gen), list(gt)
    if len(gen) != len(gt):
        raise ValueError("gen and gt sets differ in size")
    errs = []
    for i, (g, t) in enumerate(zip(gen, gt)):
        g, t = _as_asset(g), _as_asset(t)
        if g.base.shape != t.base.shape:
            raise ValueError(f"pair {i}: shape mismatch")
        gd, td = g.level(level), t.level(level)
        denom = float(np.abs(td).sum())
        if denom == 0.0:
            raise ValueError(f"pair {i}: ground-truth norm is zero at level {level}")
        errs.append(float(np.abs(gd - td).sum()) / denom)
    return errs


def mcr(gen, gt, level: int = 1, tau: float = MCR_TAU) -> float:
    """Percentage of pairs whose relative L1 error at ``level`` is below ``tau``."""
    errs = mcr_errors(gen, gt, level)
    if not errs:
        raise ValueError("empty texture set")
    return 100.0 * sum(e < tau for e in errs) / len(errs)


def _rotation(theta_deg: float):
    t = float(theta_deg) % 360.0
    exact = {0.0: (1.0, 0.0), 90.0: (0.0, 1.0), 180.0: (-1.0, 0.0), 270.0: (0.0, -1.0)}
    if t in exact:
        return exact[t]
    r = math.radians(t)
    return math.cos(r), math.sin(r)


def _source_coords(shape, theta_deg: float, side: int):
    """Source (row, col) coordinates for a centered ``side x side`` crop of the
    texture rotated by ``theta`` about its center."""
    h, w = shape[:2]
    c, s = _rotation(theta_deg)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    off = np.arange(side) - (side - 1) / 2.0
    v, u = np.meshgrid(off, off, indexing="ij")  # v: row offset, u: col offset
    # inverse rotation of output offsets back into the source grid
    ys = cy + c * v - s * u
    xs = cx + s * v + c * u
    return ys, xs


def _inside(ys, xs, shape, tol=1e-9) -> bool:
    h, w = shape[:2]
    return bool(ys.min() >= -tol and xs.min() >= -tol and ys.max() <= h - 1 + tol and xs.max() <= w - 1 + tol)


def crop_side(shape, theta_deg: float) -> int:
    """Largest centered square whose samples all fall inside the source."""
    side = min(shape[:2])
    while side > 0:
        ys, xs = _source_coords(shape, theta_deg, side)
        corners_y = ys[[0, 0, -1, -1], [0, -1, 0, -1]]
        corners_x = xs[[0, 0, -1, -1], [0, -1, 0, -1]]
        if _inside(corners_y, corners_x, shape):
            return side
        side -= 1
    return 0


def _bilinear(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    h, w = img.shape[:2]
    ys = np.clip(ys, 0.0, h - 1)
    xs = np.clip(xs, 0.0, w - 1)
    y0 = np.minimum(np.floor(ys).astype(int), h - 2 if h > 1 else 0)
    x0 = np.minimum(np.floor(xs).astype(int), w - 2 if w > 1 else 0)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    if img.ndim == 3:
        fy, fx = fy[..., None], fx[..., None]
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def angular_slice(texture, theta_deg: float, side: int | None = None) -> np.ndarray:
    """Rotate by ``theta`` about the center (bilinear) and crop the interior square."""
    img = _base(texture)
    if side is None:
        side = crop_side(img.shape, theta_deg)
    ys, xs = _source_coords(img.shape, theta_deg, side)
    return _bilinear(img, ys, xs)


def adf(gen, gt, angles=ADF_ANGLES, window: int = SSIM_WINDOW) -> float:
    g, t = _base(gen), _base(gt)
    if g.shape != t.shape:
        raise ValueError(f"shape mismatch: {g.shape} vs {t.shape}")
    angles = list(angles)
    if not angles:
        raise ValueError("angles must be non-empty")
    vals = []
    for theta in angles:
        side = crop_side(g.shape, theta)
        if side < window:
            raise ValueError("texture too small for angle set")
        vals.append(ssim(angular_slice(g, theta, side), angular_slice(t, theta, side), window))
    return float(np.mean(vals))


@dataclass
class MemoryLedger:
    """Append-only (timestamp, geometry_bytes, texture_bytes) accounting."""

    timeline: list = field(default_factory=list)

    def record(self, geometry_bytes: float, texture_bytes: float, timestamp: int | None = None):
        if geometry_bytes < 0 or texture_bytes < 0:
            raise ValueError("byte counts must be non-negative")
        ts = len(self.timeline) if timestamp is None else timestamp
        self.timeline.append((ts, geometry_bytes, texture_bytes))


def peak_memory(ledger) -> float:
    timeline = ledger.timeline if isinstance(ledger, MemoryLedger) else list(ledger)
    if not timeline:
        raise ValueError("empty ledger")
    return max(entry[-2] + entry[-1] for entry in timeline)
