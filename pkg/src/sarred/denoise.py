"""Volume denoisers and the diagnostics built on them.

Every denoiser maps a complex ``(Nz, Ny, Nx)`` volume to a volume of the
same shape and is a pure function of its input. Boundaries are handled by
half-sample symmetric (mirror) extension throughout.
"""

from __future__ import annotations

import os
import subprocess
import tempfile
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

KINDS = ("identity", "gaussian3d", "nlm3d", "external")

_DEFAULTS = {
    "identity": {},
    "gaussian3d": {"radius": 2, "sigma": 1.0},
    "nlm3d": {"patch": 1, "search": 2, "h": None, "h_factor": 1.0, "h_floor": 0.05,
              "center": "max", "noise_offset": True},
    "external": {"command": None, "deterministic": False, "timeout": 600},
}


@dataclass(frozen=True)
class DenoiserSpec:
    """Denoiser kind plus its parameters.

    gaussian3d: ``radius`` (voxels), ``sigma`` (voxels).
    nlm3d: ``patch`` and ``search`` radii, bandwidth ``h``; when ``h`` is
    None it is set per call to ``h_factor`` times a robust noise estimate,
    but never below ``h_floor`` times the peak magnitude; ``center``
    selects the self weight (``"max"``: largest neighbour weight,
    ``"one"``: 1); ``noise_offset`` subtracts the expected patch distance
    of pure noise, ``2 sigma^2``, before weighting.
    external: ``command`` list with ``{input}``/``{output}`` placeholders
    and ``deterministic=True``.
    """

    kind: str = "identity"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown denoiser kind {self.kind!r}; expected one of {KINDS}")
        unknown = set(self.params) - set(_DEFAULTS[self.kind])
        if unknown:
            raise ValueError(f"unknown {self.kind} parameters: {sorted(unknown)}")
        merged = {**_DEFAULTS[self.kind], **self.params}
        for key in ("radius", "patch", "search"):
            if key in merged and int(merged[key]) < 0:
                raise ValueError(f"{key} must be >= 0")
        if self.kind == "gaussian3d" and not merged["sigma"] > 0:
            raise ValueError("gaussian sigma must be positive")
        if self.kind == "nlm3d":
            if merged["h"] is not None and not merged["h"] > 0:
                raise ValueError("NLM bandwidth h must be positive")
            if not merged["h_factor"] > 0 or merged["h_floor"] < 0:
                raise ValueError("h_factor must be positive and h_floor non-negative")
            if merged["center"] not in ("max", "one"):
                raise ValueError("center must be 'max' or 'one'")
        if self.kind == "external":
            if not merged["command"]:
                raise ValueError("external denoiser needs a command")
            if merged["deterministic"] is not True:
                raise ValueError("external denoiser must declare deterministic=True")
        object.__setattr__(self, "params", merged)

    @property
    def is_linear(self) -> bool:
        return self.kind in ("identity", "gaussian3d")


def _as_volume(v):
    v = np.asarray(v)
    if v.ndim != 3:
        raise ValueError(f"expected a 3D volume, got shape {v.shape}")
    return v


def denoise(spec: DenoiserSpec, v) -> np.ndarray:
    v = _as_volume(v)
    kind, p = spec.kind, spec.params
    if kind == "identity":
        return v.copy()
    if kind == "gaussian3d":
        return gaussian3d(v, p["radius"], p["sigma"])
    if kind == "nlm3d":
        return nlm3d(v, p["patch"], p["search"], h=p["h"], h_factor=p["h_factor"],
                     h_floor=p["h_floor"], center=p["center"],
                     noise_offset=p["noise_offset"])
    return _external(v, p["command"], p["timeout"])


def gaussian_kernel(radius: int, sigma: float) -> np.ndarray:
    k = np.arange(-radius, radius + 1, dtype=float)
    w = np.exp(-0.5 * (k / sigma) ** 2)
    return w / w.sum()


def _check_radius(shape, radius, what):
    if any(radius > n for n in shape):
        raise ValueError(f"{what} {radius} exceeds volume extent {shape}")


def gaussian3d(v, radius=2, sigma=1.0) -> np.ndarray:
    """Separable normalized Gaussian blur of real and imaginary parts."""
    v = _as_volume(v)
    radius = int(radius)
    _check_radius(v.shape, radius, "kernel radius")
    w = gaussian_kernel(radius, sigma)
    out = v.astype(complex)
    for axis in range(3):
        re = ndimage.correlate1d(out.real, w, axis=axis, mode="reflect")
        im = ndimage.correlate1d(out.imag, w, axis=axis, mode="reflect")
        out = re + 1j * im
    return out


def noise_sigma(mag) -> float:
    """Robust noise level from the median absolute deviation of a Laplacian.

    For white noise the 7-point Laplacian has variance 42 sigma^2.
    """
    lap = ndimage.laplace(np.asarray(mag, dtype=float), mode="reflect")
    mad = np.median(np.abs(lap - np.median(lap)))
    return float(mad / 0.6744897501960817 / np.sqrt(42.0))


def nlm_bandwidth(mag, h=None, h_factor=1.0, h_floor=0.05) -> float:
    peak = float(np.max(mag)) if np.size(mag) else 0.0
    if h is not None:
        return float(h)
    return max(h_factor * noise_sigma(mag), h_floor * peak, np.finfo(float).tiny)


def _offsets(search):
    r = range(-search, search + 1)
    return [(dz, dy, dx) for dz in r for dy in r for dx in r]


def nlm3d(v, patch=1, search=2, h=None, h_factor=1.0, h_floor=0.05, center="max",
          noise_offset=True, return_weight_sum=False):
    """Non-local means over a cubic search window.

    Patch distances are mean squared differences of the magnitude volume;
    the resulting weights ``exp(-max(d^2 - 2 sigma^2, 0) / h^2)`` (``sigma``
    the robust noise level, or 0 without ``noise_offset``) are normalized
    per voxel and applied to the complex values. With ``center="max"`` a voxel's own
    weight is the largest weight among its neighbours, so values without
    any similar neighbour are pulled toward the most similar one instead
    of being passed through.
    """
    v = _as_volume(v).astype(complex)
    patch, search = int(patch), int(search)
    _check_radius(v.shape, search, "search radius")
    _check_radius(v.shape, patch, "patch radius")
    mag = np.abs(v)
    h = nlm_bandwidth(mag, h, h_factor, h_floor)
    offset = 2.0 * noise_sigma(mag) ** 2 if noise_offset else 0.0
    if not np.any(mag):
        out = np.zeros_like(v)
        return (out, np.ones(v.shape)) if return_weight_sum else out

    pad = patch + search
    mag_p = np.pad(mag, pad, mode="symmetric")
    v_p = np.pad(v, search, mode="symmetric")
    nz, ny, nx = v.shape
    size = 2 * patch + 1
    # region of mag_p over which patch sums are needed for voxel centers
    core = tuple(slice(search, search + n + 2 * patch) for n in v.shape)
    ref = mag_p[core]

    num = np.zeros_like(v)
    den = np.zeros(v.shape)
    wmax = np.zeros(v.shape)
    weights = []
    for dz, dy, dx in _offsets(search):
        if center == "max" and dz == dy == dx == 0:
            continue
        shifted = mag_p[search + dz: search + dz + nz + 2 * patch,
                        search + dy: search + dy + ny + 2 * patch,
                        search + dx: search + dx + nx + 2 * patch]
        diff2 = (shifted - ref) ** 2
        dist = ndimage.uniform_filter(diff2, size=size, mode="reflect")
        dist = dist[patch: patch + nz, patch: patch + ny, patch: patch + nx]
        w = np.exp(-np.maximum(dist - offset, 0.0) / h**2)
        num += w * v_p[search + dz: search + dz + nz,
                       search + dy: search + dy + ny,
                       search + dx: search + dx + nx]
        den += w
        if center == "max":
            np.maximum(wmax, w, out=wmax)
        if return_weight_sum:
            weights.append(w)
    if center == "max":
        if search == 0:
            wmax[:] = 1.0
        np.maximum(wmax, np.finfo(float).tiny, out=wmax)
        num += wmax * v
        den += wmax
        if return_weight_sum:
            weights.append(wmax)
    out = num / den
    if return_weight_sum:
        wsum = np.zeros(v.shape)
        for w in weights:
            wsum += w / den
        return out, wsum
    return out


def _external(v, command, timeout):
    from .io import read_volume, write_volume
    from .model import Reflectivity, SceneGrid

    nz, ny, nx = v.shape
    grid = SceneGrid((nx, ny, nz))
    with tempfile.TemporaryDirectory(prefix="sarred-ext-") as tmp:
        src = os.path.join(tmp, "input.sarvol")
        dst = os.path.join(tmp, "output.sarvol")
        write_volume(src, Reflectivity(grid, v.ravel()))
        argv = [str(a).format(input=src, output=dst) for a in command]
        proc = subprocess.run(argv, capture_output=True, text=True, timeout=timeout)
        if proc.returncode != 0:
            raise RuntimeError(
                f"external denoiser exited with {proc.returncode}: {proc.stderr.strip()}"
            )
        out = read_volume(dst)
    if out.grid.dims != grid.dims:
        raise RuntimeError(f"external denoiser changed volume dims to {out.grid.dims}")
    return out.volume.copy()


def _inner(a, b) -> float:
    return float(np.real(np.vdot(a, b)))


def red_energy(spec: DenoiserSpec, v) -> float:
    """RED prior value ``0.5 * Re(v^H (v - D(v)))``."""
    v = _as_volume(v)
    if spec.kind == "identity":
        return 0.0
    return 0.5 * _inner(v, v - denoise(spec, v))


def cyclic_monotonicity_score(spec: DenoiserSpec, points) -> float:
    """``sum_j Re<x_j - D(x_j), D(x_j) - D(x_{j+1})>`` over a closed cycle.

    A cyclically firmly nonexpansive denoiser gives a non-negative score
    for every cycle. A negative score for a non-linear denoiser only
    triggers a warning.
    """
    points = [_as_volume(p) for p in points]
    if len(points) < 2:
        raise ValueError("need at least two points")
    if any(p.shape != points[0].shape for p in points):
        raise ValueError("all points must share one shape")
    den = [denoise(spec, p) for p in points]
    n = len(points)
    score = sum(_inner(points[j] - den[j], den[j] - den[(j + 1) % n]) for j in range(n))
    if score < 0 and not spec.is_linear:
        warnings.warn(
            f"{spec.kind} denoiser gave a negative cyclic monotonicity score ({score:.3e})",
            RuntimeWarning,
            stacklevel=2,
        )
    return score


@dataclass
class GradientCheckReport:
    max_rel_error: float
    rel_errors: list
    strict: bool
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def red_gradient_check(spec, v, f, f_grad, lam, n_dirs=4, step=1e-4, seed=0, tol=1e-5):
    """Finite-difference check of ``grad f + lam (v - D(v))``.

    ``f`` is the data term (callable on volumes) and ``f_grad`` its
    gradient at ``v`` (a volume). The analytic directional derivative
    ``Re<g, delta>`` is compared with central differences of
    ``f + lam * red_energy`` along random complex directions. The check is
    only exact for linear symmetric denoisers; for other kinds the report
    is marked non-strict.
    """
    v = _as_volume(v).astype(complex)
    grad = np.asarray(f_grad).reshape(v.shape) + lam * (v - denoise(spec, v))
    rng = np.random.default_rng(seed)

    def objective(u):
        return f(u) + (lam * red_energy(spec, u) if lam else 0.0)

    errors = []
    for _ in range(n_dirs):
        d = rng.standard_normal(v.shape) + 1j * rng.standard_normal(v.shape)
        d /= np.linalg.norm(d)
        fd = (objective(v + step * d) - objective(v - step * d)) / (2 * step)
        an = _inner(grad, d)
        errors.append(abs(fd - an) / max(abs(an), abs(fd), 1e-300))
    return GradientCheckReport(max(errors), errors, spec.is_linear, tol)
