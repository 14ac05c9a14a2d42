"""Imaging geometry, scene grids, waveforms and synthetic scene presets.

Index conventions are fixed so that operator rows and columns are
reproducible:

* voxels are flattened row-major with Z outermost, then Y, then X
  (a volume array has shape ``(Nz, Ny, Nx)``);
* array elements are ordered elevation (Z) outer, azimuth (Y) inner.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 2.99792458e8

PRESETS = ("single_point", "point_grid", "wireframe")


@dataclass(frozen=True)
class SceneGrid:
    """Regular voxel grid covering the imaging volume.

    ``dims``, ``spacing`` and ``origin`` are given in (x, y, z) order;
    ``origin`` is the position of voxel (0, 0, 0).
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
            raise ValueError("dims, spacing and origin must have 3 entries")
        if any(n < 1 for n in dims):
            raise ValueError(f"grid dims must be >= 1, got {dims}")
        if any(not s > 0 or not np.isfinite(s) for s in spacing):
            raise ValueError(f"grid spacing must be positive, got {spacing}")
        if not all(np.isfinite(origin)):
            raise ValueError(f"grid origin must be finite, got {origin}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def n_voxels(self) -> int:
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def shape(self) -> tuple[int, int, int]:
        """Array shape of a volume on this grid, ``(Nz, Ny, Nx)``."""
        nx, ny, nz = self.dims
        return (nz, ny, nx)

    @classmethod
    def centered(cls, dims, spacing) -> SceneGrid:
        """Grid whose voxel centers are symmetric about the origin."""
        dims = tuple(int(n) for n in dims)
        spacing = tuple(float(s) for s in spacing)
        origin = tuple(-0.5 * (n - 1) * s for n, s in zip(dims, spacing))
        return cls(dims, spacing, origin)

    def index(self, ix: int, iy: int, iz: int) -> int:
        nx, ny, _ = self.dims
        return (iz * ny + iy) * nx + ix

    def unravel(self, n: int) -> tuple[int, int, int]:
        nx, ny, _ = self.dims
        iz, rem = divmod(int(n), nx * ny)
        iy, ix = divmod(rem, nx)
        return ix, iy, iz


@dataclass(frozen=True)
class ArrayGeometry:
    """Ordered set of (virtual) array element positions in meters."""

    elements: np.ndarray
    aperture: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        el = np.array(self.elements, dtype=float).reshape(-1, 3)
        if el.shape[0] == 0:
            raise ValueError("array geometry needs at least one element")
        if not np.all(np.isfinite(el)):
            raise ValueError("element positions must be finite")
        el.setflags(write=False)
        object.__setattr__(self, "elements", el)

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]


@dataclass(frozen=True)
class Waveform:
    """Stepped-frequency waveform after pulse compression.

    ``chirp_rate`` is carried for completeness only; the measurement model
    starts from the compressed phase history and never uses it.
    """

    carrier_hz: float
    bandwidth_hz: float = 0.0
    n_freq: int = 1
    c: float = SPEED_OF_LIGHT
    chirp_rate: float | None = None

    def __post_init__(self):
        if not self.carrier_hz > 0:
            raise ValueError("carrier frequency must be positive")
        if self.bandwidth_hz < 0:
            raise ValueError("bandwidth must be non-negative")
        if int(self.n_freq) < 1:
            raise ValueError("n_freq must be >= 1")
        if not self.c > 0:
            raise ValueError("propagation speed must be positive")
        object.__setattr__(self, "n_freq", int(self.n_freq))

    @property
    def frequencies(self) -> np.ndarray:
        if self.n_freq == 1:
            return np.array([float(self.carrier_hz)])
        half = 0.5 * self.bandwidth_hz
        return np.linspace(self.carrier_hz - half, self.carrier_hz + half, self.n_freq)

    @property
    def wavenumbers(self) -> np.ndarray:
        return 2.0 * np.pi * self.frequencies / self.c


@dataclass(frozen=True)
class Reflectivity:
    """Complex scattering amplitudes on a scene grid."""

    grid: SceneGrid
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex).reshape(-1)
        if v.size != self.grid.n_voxels:
            raise ValueError(
                f"reflectivity has {v.size} values, grid has {self.grid.n_voxels} voxels"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("reflectivity values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def volume(self) -> np.ndarray:
        """Values as a ``(Nz, Ny, Nx)`` array (a view)."""
        return self.values.reshape(self.grid.shape)


def make_planar_array(n_az, n_el, size_az, size_el, standoff) -> ArrayGeometry:
    """Uniform planar array in the Y-Z plane at ``x = -standoff``.

    ``size_az`` and ``size_el`` are the distances between the outermost
    elements. Elements are ordered elevation outer, azimuth inner.
    """
    if int(n_az) < 1 or int(n_el) < 1:
        raise ValueError("element counts must be >= 1")
    if not size_az > 0 or not size_el > 0:
        raise ValueError("aperture sizes must be positive")
    if not standoff > 0:
        raise ValueError("standoff must be positive")
    ys = _centered_axis(int(n_az), float(size_az))
    zs = _centered_axis(int(n_el), float(size_el))
    zz, yy = np.meshgrid(zs, ys, indexing="ij")
    xx = np.full(zz.size, -float(standoff))
    elements = np.column_stack([xx, yy.ravel(), zz.ravel()])
    return ArrayGeometry(elements, aperture=(float(size_az), float(size_el)))


def _centered_axis(n, size):
    if n == 1:
        return np.zeros(1)
    return np.linspace(-0.5 * size, 0.5 * size, n)


def voxel_positions(grid: SceneGrid) -> np.ndarray:
    """Voxel centers as an ``(N, 3)`` array in flattened volume order."""
    nx, ny, nz = grid.dims
    axes = [o + s * np.arange(n) for o, s, n in zip(grid.origin, grid.spacing, grid.dims)]
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    return np.column_stack([xx.ravel(), yy.ravel(), zz.ravel()])


def position_to_index(grid: SceneGrid, position) -> int:
    """Inverse of :func:`voxel_positions` for a position on the grid."""
    idx = [
        int(round((p - o) / s)) for p, o, s in zip(position, grid.origin, grid.spacing)
    ]
    if any(i < 0 or i >= n for i, n in zip(idx, grid.dims)):
        raise ValueError(f"position {tuple(position)} lies outside the grid")
    return grid.index(*idx)


def scene_preset(name: str, grid: SceneGrid, seed: int = 0, stride: int = 4) -> Reflectivity:
    """Synthetic reflectivity volumes.

    ``single_point`` puts a unit scatterer at the grid center;
    ``point_grid`` a unit lattice with the given stride; ``wireframe`` a
    sparse aircraft-like line target (fuselage, wings, tail fin) with
    real amplitudes in [0.8, 1] drawn from ``seed``.
    """
    nz, ny, nx = grid.shape
    vol = np.zeros(grid.shape, dtype=complex)
    if name == "single_point":
        vol[nz // 2, ny // 2, nx // 2] = 1.0
    elif name == "point_grid":
        stride = int(stride)
        if stride < 1:
            raise ValueError("stride must be >= 1")
        vol[::stride, ::stride, ::stride] = 1.0
    elif name == "wireframe":
        mask = _wireframe_mask(grid.shape)
        rng = np.random.default_rng(seed)
        amps = rng.uniform(0.8, 1.0, size=int(mask.sum()))
        vol[mask] = amps
    else:
        raise ValueError(f"unknown scene preset {name!r}; expected one of {PRESETS}")
    return Reflectivity(grid, vol.ravel(), meta={"preset": name, "seed": int(seed)})


def _wireframe_mask(shape):
    # Edges run along the cross-range axes (Y, Z) only. A constant-phase
    # segment along range (X) is nearly invisible to a band-limited radar;
    # only its end points scatter.
    nz, ny, nx = shape
    mask = np.zeros(shape, dtype=bool)
    cz, cy, cx = nz // 2, ny // 2, nx // 2

    def span(n, lo, hi):
        return slice(max(int(round(lo * n)), 0), min(int(round(hi * n)), n))

    # planform at the central range slice: fuselage along y, wing along z
    mask[cz, span(ny, 0.125, 0.875), cx] = True
    wing_y = min(cy + max(ny // 8, 0), ny - 1)
    mask[span(nz, 0.125, 0.875), wing_y, cx] = True
    # tailplane along z near the rear of the fuselage
    tail_y = max(int(round(0.1875 * ny)), 0)
    mask[span(nz, 0.3125, 0.6875), tail_y, cx] = True
    # fin: a second short edge one quarter of the depth behind the planform
    fin_x = min(cx + max(nx // 4, 1), nx - 1)
    mask[span(nz, 0.375, 0.625), tail_y, fin_x] = True
    return mask
