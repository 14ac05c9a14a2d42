import sys

import numpy as np
import pytest

from sarred.forward import build_operator
from sarred.model import SceneGrid, Waveform, make_planar_array


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_operator():
    # 3x3 elements, 4 frequencies, 6x5x4 voxels: 36 x 120
    grid = SceneGrid.centered((6, 5, 4), (0.01, 0.01, 0.01))
    geom = make_planar_array(3, 3, 0.1, 0.1, 0.5)
    wf = Waveform(37.5e9, 8e9, 4)
    return build_operator(geom, wf, grid)


def crandn(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class DenseOperator:
    """Explicit matrix with the operator interface the solvers use."""

    explicit = True

    def __init__(self, mat, grid):
        self.mat = np.asarray(mat, dtype=complex)
        self.grid = grid

    @property
    def shape(self):
        return self.mat.shape

    def matrix(self):
        return self.mat

    def forward(self, x):
        return self.mat @ np.asarray(x).reshape(-1)

    def adjoint(self, y):
        return self.mat.conj().T @ np.asarray(y).reshape(-1)


@pytest.fixture(scope="session")
def overdetermined():
    # 4x4 elements, 8 frequencies (128 rows) over 4x4x4 voxels
    grid = SceneGrid.centered((4, 4, 4), (0.01, 0.01, 0.01))
    geom = make_planar_array(4, 4, 0.2, 0.2, 0.4)
    return build_operator(geom, Waveform(37.5e9, 12e9, 8), grid)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
