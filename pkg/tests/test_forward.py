import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import crandn
from sarred.forward import (MeasurementOperator, ResourceLimitError, add_noise, apply_adjoint,
                            apply_forward, build_operator, make_mask, noise_variance,
                            subsample)
from sarred.model import (SPEED_OF_LIGHT, ArrayGeometry, Reflectivity, SceneGrid, Waveform,
                          make_planar_array, voxel_positions)


def naive_forward(geom, wf, grid, x):
    # element outer, frequency inner; every entry recomputed from scratch
    pos = voxel_positions(grid)
    out = []
    for e in geom.elements:
        for f in wf.frequencies:
            k = 2 * np.pi * f / wf.c
            acc = 0j
            for n in range(grid.n_voxels):
                r = np.sqrt(sum((e[i] - pos[n][i]) ** 2 for i in range(3)))
                acc += np.exp(-2j * k * r) * x[n]
            out.append(acc)
    return np.array(out)


def test_single_entry_operator():
    geom = ArrayGeometry([[-1.0, 0.0, 0.0]])
    wf = Waveform(SPEED_OF_LIGHT / (4 * np.pi))
    A = build_operator(geom, wf, SceneGrid((1, 1, 1)))
    np.testing.assert_allclose(A.matrix(), [[np.exp(-1j)]], atol=1e-15)


def test_two_by_two_hand_computed():
    geom = ArrayGeometry([[-1.0, 0.0, 0.0], [-1.0, 1.0, 0.0]])
    wf = Waveform(3e9, c=3e8)
    grid = SceneGrid((2, 1, 1), (1.0, 1.0, 1.0))
    k = 2 * np.pi * 3e9 / 3e8
    r = np.array([[1.0, 2.0], [np.sqrt(2.0), np.sqrt(5.0)]])
    A = build_operator(geom, wf, grid)
    np.testing.assert_allclose(A.matrix(), np.exp(-2j * k * r), atol=1e-12)


def test_unit_modulus_and_lazy_agreement(small_operator):
    A = small_operator
    np.testing.assert_allclose(np.abs(A.matrix()), 1.0, atol=1e-12)
    lazy = MeasurementOperator(A.geometry, A.waveform, A.grid, explicit=False)
    assert not lazy.explicit
    np.testing.assert_allclose(lazy.matrix(), A.matrix(), atol=1e-12)
    assert np.all(A.distances() > 0)


def test_forward_matches_naive_loop(rng):
    grid = SceneGrid.centered((3, 2, 2), (0.02, 0.02, 0.02))
    geom = make_planar_array(2, 2, 0.1, 0.1, 0.4)
    wf = Waveform(30e9, 6e9, 3)
    x = crandn(rng, grid.n_voxels)
    want = naive_forward(geom, wf, grid, x)
    for explicit in (True, False):
        A = build_operator(geom, wf, grid, explicit=explicit)
        np.testing.assert_allclose(apply_forward(A, x).values, want, rtol=0, atol=1e-12 * np.abs(want).max())


def test_forward_trivial_inputs(small_operator):
    A = small_operator
    assert not np.any(apply_forward(A, np.zeros(A.shape[1])).values)
    e = np.zeros(A.shape[1])
    e[17] = 1.0
    np.testing.assert_array_equal(apply_forward(A, e).values, A.matrix()[:, 17])
    assert not np.any(apply_adjoint(A, np.zeros(A.shape[0])))
    with pytest.raises(ValueError):
        apply_forward(A, np.zeros(A.shape[1] + 1))
    with pytest.raises(ValueError):
        apply_adjoint(A, np.zeros(3))


def test_adjoint_single_entry():
    geom = ArrayGeometry([[-1.0, 0.0, 0.0]])
    A = build_operator(geom, Waveform(1e9), SceneGrid((1, 1, 1)))
    theta = -np.angle(A.matrix()[0, 0])
    np.testing.assert_allclose(apply_adjoint(A, [2.0 + 1j]).ravel(),
                               [np.exp(1j * theta) * (2.0 + 1j)], atol=1e-14)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_adjoint_identity(small_operator, seed, explicit):
    A = small_operator if explicit else MeasurementOperator(
        small_operator.geometry, small_operator.waveform, small_operator.grid, explicit=False)
    rng = np.random.default_rng(seed)
    x, y = crandn(rng, A.shape[1]), crandn(rng, A.shape[0])
    lhs = np.vdot(y, A.forward(x))
    rhs = np.vdot(A.adjoint(y), x)
    assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs))


def test_adjoint_volume_shape(small_operator):
    assert apply_adjoint(small_operator, np.ones(36)).shape == small_operator.grid.shape


def test_memory_budget():
    geom = make_planar_array(4, 4, 0.1, 0.1, 0.5)
    grid = SceneGrid.centered((8, 8, 8), (0.01,) * 3)
    with pytest.raises(ResourceLimitError, match="explicit=False"):
        build_operator(geom, Waveform(30e9, 1e9, 4), grid, memory_budget=1024)
    lazy = build_operator(geom, Waveform(30e9, 1e9, 4), grid, explicit=False, memory_budget=1024)
    assert lazy.shape == (64, 512)


def test_element_on_voxel_rejected():
    with pytest.raises(ValueError):
        build_operator(ArrayGeometry([[0.0, 0.0, 0.0]]), Waveform(1e9), SceneGrid((1, 1, 1)))


def test_mask_basics():
    m = make_mask(100, 1.0, 7)
    np.testing.assert_array_equal(m.kept_rows, np.arange(100))
    m = make_mask(100, 0.25, 7)
    assert len(np.unique(m.kept_rows)) == 25
    np.testing.assert_array_equal(m.kept_rows, make_mask(100, 0.25, 7).kept_rows)
    assert np.all(np.diff(m.kept_rows) > 0)
    assert make_mask(10, 0.01, 0).kept_rows.size == 1
    for bad in (0.0, -0.5, 1.5):
        with pytest.raises(ValueError):
            make_mask(10, bad, 0)


def test_masks_differ_between_seeds():
    masks = {tuple(make_mask(8, 0.5, s).kept_rows) for s in range(50)}
    # C(8, 4) = 70 subsets; independent seeds should hit many of them
    assert len(masks) > 20


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 500), st.floats(0.001, 1.0), st.integers(0, 10**6))
def test_mask_size_property(M, sr, seed):
    m = make_mask(M, sr, seed)
    assert m.kept_rows.size == max(1, int(np.floor(sr * M + 0.5)))
    assert m.kept_rows.max() < M


def test_subsample(small_operator, rng):
    A = small_operator
    x = crandn(rng, A.shape[1])
    y = apply_forward(A, x)
    full = make_mask(A.shape[0], 1.0, 0)
    np.testing.assert_array_equal(subsample(y, full).values, y.values)
    np.testing.assert_array_equal(subsample(A, full).matrix(), A.matrix())
    mask = make_mask(A.shape[0], 0.4, 3)
    np.testing.assert_allclose(apply_forward(subsample(A, mask), x).values,
                               subsample(y, mask).values, atol=1e-12)
    with pytest.raises(ValueError):
        subsample(np.zeros(5), mask)


def test_subsample_first_row():
    from sarred.forward import SamplingMask
    geom = ArrayGeometry([[-1.0, 0.0, 0.0], [-1.0, 0.5, 0.0]])
    A = build_operator(geom, Waveform(1e9), SceneGrid((2, 1, 1)))
    sub = subsample(A, SamplingMask(np.array([0]), 0.5, 0, 2))
    np.testing.assert_array_equal(sub.matrix(), A.matrix()[:1])


def test_noise_infinite_snr_and_determinism(rng):
    y = crandn(rng, 64)
    np.testing.assert_array_equal(add_noise(y, np.inf, 1).values, y)
    np.testing.assert_array_equal(add_noise(y, 5.0, 9).values, add_noise(y, 5.0, 9).values)
    assert not np.array_equal(add_noise(y, 5.0, 9).values, add_noise(y, 5.0, 10).values)
    with pytest.raises(ValueError):
        add_noise(np.zeros(4), 10.0, 0)


def test_noise_empirical_snr(rng):
    y = crandn(rng, 100_000)
    noisy = add_noise(y, 0.0, 5).values
    n = noisy - y
    snr = 10 * np.log10(np.mean(np.abs(y) ** 2) / np.mean(np.abs(n) ** 2))
    assert abs(snr) < 0.1
    # circular: equal power in real and imaginary parts
    assert abs(np.var(n.real) / np.var(n.imag) - 1) < 0.05
    assert noise_variance(y, 10.0) == pytest.approx(np.mean(np.abs(y) ** 2) / 10)
