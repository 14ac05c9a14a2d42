"""Elementwise proximal operators for L1 and MCP penalties on complex data.

Both operators act on magnitudes and keep the phase, which is the
phase-equivariant extension of the usual real-valued formulas.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ProxParams:
    lam: float
    theta: float = 3.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.theta > 1:
            raise ValueError("MCP theta must exceed 1")


def _unit_phase(v):
    # exp(j angle) rather than v / |v|, which overflows for subnormal |v|
    return np.exp(1j * np.angle(v)) if np.iscomplexobj(v) else np.where(v < 0, -1.0, 1.0)


def soft_threshold(v, lam):
    """Soft thresholding, the proximal map of ``lam * |x|``.

    Zero where ``|v| < lam``, otherwise the magnitude is reduced by ``lam``.
    """
    if lam < 0:
        raise ValueError("threshold must be non-negative")
    v = np.asarray(v)
    mag = np.abs(v)
    shrunk = np.maximum(mag - lam, 0.0)
    out = shrunk * _unit_phase(v)
    return out if out.ndim else out[()]


def mcp_threshold(v, lam, theta):
    """Firm thresholding rule of the minimax concave penalty.

    ========================  ===================================
    ``|v| < lam``             0
    ``lam <= |v| <= th*lam``  ``th (|v| - lam) / (th - 1)`` with v's phase
    ``|v| > th*lam``          v
    ========================  ===================================
    """
    if not theta > 1:
        raise ValueError("MCP theta must exceed 1")
    if lam < 0:
        raise ValueError("threshold must be non-negative")
    v = np.asarray(v)
    mag = np.abs(v)
    mid = theta * np.maximum(mag - lam, 0.0) / (theta - 1.0)
    new_mag = np.where(mag > theta * lam, mag, mid)
    out = np.where(mag > theta * lam, v, new_mag * _unit_phase(v))
    return out if out.ndim else out[()]


def mcp_penalty(x, lam, theta) -> float:
    """Summed MCP penalty, used for objective logging only.

    Per entry: ``|x| - |x|^2 / (2 theta)`` while ``|x| <= theta*lam``,
    ``theta / 2`` beyond.
    """
    if not theta > 1:
        raise ValueError("MCP theta must exceed 1")
    mag = np.abs(np.asarray(x)).ravel()
    inner = mag <= theta * lam
    return float(np.sum(np.where(inner, mag - mag**2 / (2.0 * theta), 0.5 * theta)))
