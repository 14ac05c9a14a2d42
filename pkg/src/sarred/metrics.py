"""Image quality metrics on peak-normalized magnitude volumes.

Each volume is reduced to ``|v| / max|v|`` before comparison, so every
metric is invariant to a positive or unit-modulus scaling of either
argument. An all-zero estimate is left unnormalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PSNR_CAP_DB = 300.0
SSIM_K1 = 0.01
SSIM_K2 = 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    nmse: float


def _values(v):
    return np.asarray(getattr(v, "values", v))


def normalized_magnitude(v, *, require_nonzero=False) -> np.ndarray:
    mag = np.abs(_values(v)).astype(float).ravel()
    peak = mag.max() if mag.size else 0.0
    if peak == 0.0:
        if require_nonzero:
            raise ValueError("reference volume is all zero")
        return mag
    return mag / peak


def _pair(ref, est):
    r, e = _values(ref), _values(est)
    if r.size != e.size or (r.ndim > 1 and e.ndim > 1 and r.shape != e.shape):
        raise ValueError(f"shape mismatch: {r.shape} vs {e.shape}")
    return normalized_magnitude(r, require_nonzero=True), normalized_magnitude(e)


def psnr(ref, est) -> float:
    """``10 log10(1 / MSE)`` with a unit peak; capped at 300 dB."""
    r, e = _pair(ref, est)
    mse = float(np.mean((r - e) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(10.0 * np.log10(1.0 / mse), PSNR_CAP_DB))


def ssim(ref, est, k1=SSIM_K1, k2=SSIM_K2, dynamic_range=1.0) -> float:
    """Global (unwindowed) structural similarity of the two volumes."""
    r, e = _pair(ref, est)
    c1 = (k1 * dynamic_range) ** 2
    c2 = (k2 * dynamic_range) ** 2
    mr, me = r.mean(), e.mean()
    vr, ve = r.var(), e.var()
    cov = np.mean((r - mr) * (e - me))
    return float(((2 * mr * me + c1) * (2 * cov + c2)) / ((mr**2 + me**2 + c1) * (vr + ve + c2)))


def nmse(ref, est) -> float:
    """``||e - r||^2 / ||r||^2`` on normalized magnitudes."""
    r, e = _pair(ref, est)
    return float(np.sum((e - r) ** 2) / np.sum(r**2))


def evaluate(ref, est) -> MetricReport:
    return MetricReport(psnr(ref, est), ssim(ref, est), nmse(ref, est))
