"""Measurement operator, echo simulation, undersampling and noise."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ArrayGeometry, Reflectivity, SceneGrid, Waveform, voxel_positions

DEFAULT_MEMORY_BUDGET = 2 * 1024**3
_BLOCK_ROWS = 256


class ResourceLimitError(MemoryError):
    pass


class MeasurementOperator:
    """Complex sensing matrix ``A[(m, q), n] = exp(-2j k_q R_mn)``.

    Rows are ordered element outer, frequency inner. The operator is
    either held as an explicit dense matrix or generated row-block by
    row-block on demand; both give identical entries. ``rows`` restricts
    the operator to a subset of the full row set (see :func:`subsample`).
    """

    def __init__(self, geometry: ArrayGeometry, waveform: Waveform, grid: SceneGrid,
                 explicit=True, rows=None, memory_budget=DEFAULT_MEMORY_BUDGET):
        self.geometry = geometry
        self.waveform = waveform
        self.grid = grid
        self.n_full_rows = geometry.n_elements * waveform.n_freq
        if rows is None:
            rows = np.arange(self.n_full_rows)
        rows = np.asarray(rows, dtype=np.int64)
        if rows.ndim != 1 or (rows.size and (rows.min() < 0 or rows.max() >= self.n_full_rows)):
            raise ValueError("row indices out of range")
        self.rows = rows
        self._positions = voxel_positions(grid)
        self._k = waveform.wavenumbers
        for el in geometry.elements:
            if np.min(np.linalg.norm(self._positions - el, axis=1)) <= 0.0:
                raise ValueError(f"array element {tuple(el)} coincides with a voxel")
        self.explicit = bool(explicit)
        self._matrix = None
        if self.explicit:
            nbytes = 16 * self.shape[0] * self.shape[1]
            if nbytes > memory_budget:
                raise ResourceLimitError(
                    f"explicit operator needs {nbytes / 2**30:.2f} GiB, budget is "
                    f"{memory_budget / 2**30:.2f} GiB; build with explicit=False"
                )
            self._matrix = self._row_block(self.rows)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows.size, self.grid.n_voxels)

    def _row_block(self, rows):
        m, q = np.divmod(rows, self.waveform.n_freq)
        el = self.geometry.elements[m]
        dist = np.sqrt(((el[:, None, :] - self._positions[None, :, :]) ** 2).sum(axis=-1))
        return np.exp(-2j * self._k[q][:, None] * dist)

    def _blocks(self):
        for start in range(0, self.rows.size, _BLOCK_ROWS):
            stop = min(start + _BLOCK_ROWS, self.rows.size)
            yield start, stop, self._row_block(self.rows[start:stop])

    def matrix(self) -> np.ndarray:
        if self._matrix is not None:
            return self._matrix
        return self._row_block(self.rows)

    def distances(self) -> np.ndarray:
        """Element-to-voxel ranges for the active rows, shape ``(M, N)``."""
        m = self.rows // self.waveform.n_freq
        el = self.geometry.elements[m]
        return np.sqrt(((el[:, None, :] - self._positions[None, :, :]) ** 2).sum(axis=-1))

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x).reshape(-1)
        if x.size != self.shape[1]:
            raise ValueError(f"volume has {x.size} voxels, operator expects {self.shape[1]}")
        if self._matrix is not None:
            return self._matrix @ x
        out = np.empty(self.shape[0], dtype=complex)
        for start, stop, blk in self._blocks():
            out[start:stop] = blk @ x
        return out

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y).reshape(-1)
        if y.size != self.shape[0]:
            raise ValueError(f"echo has {y.size} samples, operator expects {self.shape[0]}")
        if self._matrix is not None:
            return self._matrix.conj().T @ y
        out = np.zeros(self.shape[1], dtype=complex)
        for start, stop, blk in self._blocks():
            out += blk.conj().T @ y[start:stop]
        return out

    def restrict(self, kept_rows) -> MeasurementOperator:
        kept_rows = np.asarray(kept_rows, dtype=np.int64)
        if kept_rows.size and (kept_rows.min() < 0 or kept_rows.max() >= self.shape[0]):
            raise ValueError("mask rows out of range for this operator")
        sub = object.__new__(MeasurementOperator)
        sub.__dict__.update(self.__dict__)
        sub.rows = self.rows[kept_rows]
        if self._matrix is not None:
            sub._matrix = self._matrix[kept_rows]
        return sub


@dataclass(frozen=True)
class EchoVector:
    values: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("echo values must be finite")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class SamplingMask:
    kept_rows: np.ndarray
    sr: float
    seed: int
    n_rows: int


@dataclass(frozen=True)
class NoiseRealization:
    snr_db: float
    seed: int
    sigma2: float


def build_operator(geom, wf, grid, explicit=True, memory_budget=DEFAULT_MEMORY_BUDGET):
    return MeasurementOperator(geom, wf, grid, explicit=explicit, memory_budget=memory_budget)


def _values(obj):
    if isinstance(obj, (Reflectivity, EchoVector)):
        return obj.values
    return np.asarray(obj)


def apply_forward(A: MeasurementOperator, x) -> EchoVector:
    """Echo ``y = A x`` for a reflectivity (or flat/volume array)."""
    return EchoVector(A.forward(_values(x)))


def apply_adjoint(A: MeasurementOperator, y) -> np.ndarray:
    """``A^H y`` as a ``(Nz, Ny, Nx)`` complex volume."""
    return A.adjoint(_values(y)).reshape(A.grid.shape)


def make_mask(M: int, sr: float, seed: int) -> SamplingMask:
    """Uniformly random row subset of size ``round(sr * M)``."""
    if not 0 < sr <= 1:
        raise ValueError(f"sampling rate must lie in (0, 1], got {sr}")
    if int(M) < 1:
        raise ValueError("M must be >= 1")
    n_keep = max(1, int(np.floor(sr * M + 0.5)))
    if n_keep >= M:
        kept = np.arange(M)
    else:
        rng = np.random.default_rng(seed)
        kept = np.sort(rng.choice(M, size=n_keep, replace=False))
    kept.setflags(write=False)
    return SamplingMask(kept, float(sr), int(seed), int(M))


def subsample(obj, mask: SamplingMask):
    """Keep only the masked rows of an operator or an echo, order preserved."""
    if isinstance(obj, MeasurementOperator):
        if obj.shape[0] != mask.n_rows:
            raise ValueError(f"mask is for {mask.n_rows} rows, operator has {obj.shape[0]}")
        return obj.restrict(mask.kept_rows)
    values = _values(obj).reshape(-1)
    if values.size != mask.n_rows:
        raise ValueError(f"mask is for {mask.n_rows} rows, echo has {values.size}")
    meta = dict(obj.meta) if isinstance(obj, EchoVector) else {}
    meta["sr"] = mask.sr
    meta["mask_seed"] = mask.seed
    return EchoVector(values[mask.kept_rows], meta)


def noise_variance(y_clean, snr_db: float) -> float:
    power = float(np.mean(np.abs(_values(y_clean)) ** 2))
    if np.isinf(snr_db) and snr_db > 0:
        return 0.0
    if power == 0.0:
        raise ValueError("clean echo has zero power; SNR is undefined")
    return power * 10.0 ** (-snr_db / 10.0)


def add_noise(y_clean, snr_db: float, seed: int) -> EchoVector:
    """Add circular complex Gaussian noise at ``snr_db`` relative to mean echo power.

    ``snr_db = inf`` returns the clean echo unchanged.
    """
    values = _values(y_clean).reshape(-1)
    meta = dict(y_clean.meta) if isinstance(y_clean, EchoVector) else {}
    sigma2 = noise_variance(values, snr_db)
    meta["noise"] = NoiseRealization(float(snr_db), int(seed), sigma2)
    if sigma2 == 0.0:
        return EchoVector(values.copy(), meta)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((2, values.size))
    noisy = values + np.sqrt(sigma2 / 2.0) * (noise[0] + 1j * noise[1])
    return EchoVector(noisy, meta)
