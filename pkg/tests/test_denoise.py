import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import crandn
from sarred.denoise import (DenoiserSpec, cyclic_monotonicity_score, denoise, gaussian3d,
                            gaussian_kernel, nlm3d, noise_sigma, red_energy, red_gradient_check)

GAUSS = DenoiserSpec("gaussian3d", {"radius": 1, "sigma": 0.8})
NLM = DenoiserSpec("nlm3d")


def explicit_matrix(spec, shape):
    n = int(np.prod(shape))
    cols = []
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        cols.append(denoise(spec, e.reshape(shape)).ravel())
    return np.array(cols).T


def test_spec_validation():
    with pytest.raises(ValueError):
        DenoiserSpec("bm3d")
    with pytest.raises(ValueError):
        DenoiserSpec("gaussian3d", {"width": 3})
    with pytest.raises(ValueError):
        DenoiserSpec("gaussian3d", {"sigma": 0.0})
    with pytest.raises(ValueError):
        DenoiserSpec("nlm3d", {"h": -1.0})
    with pytest.raises(ValueError):
        DenoiserSpec("external", {"command": ["x"]})
    assert DenoiserSpec("nlm3d").params["patch"] == 1
    assert DenoiserSpec("gaussian3d").is_linear and not NLM.is_linear


def test_identity(rng):
    v = crandn(rng, (3, 4, 5))
    np.testing.assert_array_equal(denoise(DenoiserSpec(), v), v)
    assert red_energy(DenoiserSpec(), v) == 0.0
    with pytest.raises(ValueError):
        denoise(DenoiserSpec(), v.ravel())


@pytest.mark.parametrize("spec", [GAUSS, DenoiserSpec("gaussian3d"), NLM,
                                  DenoiserSpec("nlm3d", {"patch": 0, "search": 3})])
def test_constant_volume_is_fixed(spec):
    v = np.full((5, 6, 7), 0.3 - 0.2j)
    np.testing.assert_allclose(denoise(spec, v), v, atol=1e-14)
    assert abs(red_energy(spec, v)) < 1e-12


def test_gaussian_spike_gives_kernel():
    radius, sigma = 2, 1.1
    k = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    k /= k.sum()
    want = np.zeros((7, 7, 7))
    want[1:6, 1:6, 1:6] = k[:, None, None] * k[None, :, None] * k[None, None, :]
    v = np.zeros((7, 7, 7))
    v[3, 3, 3] = 1.0
    out = gaussian3d(v, radius, sigma)
    np.testing.assert_allclose(out, want, atol=1e-15)
    assert out.sum() == pytest.approx(1.0, abs=1e-14)
    np.testing.assert_allclose(gaussian_kernel(radius, sigma), k)


def test_radius_too_large():
    with pytest.raises(ValueError):
        denoise(DenoiserSpec("gaussian3d", {"radius": 5}), np.zeros((4, 8, 8)))
    with pytest.raises(ValueError):
        denoise(DenoiserSpec("nlm3d", {"search": 3}), np.zeros((2, 8, 8)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 3), st.floats(0.3, 3.0))
def test_gaussian_mass_preservation(seed, radius, sigma):
    rng = np.random.default_rng(seed)
    v = crandn(rng, (4, 5, 6))
    out = gaussian3d(v, radius, sigma)
    assert abs(out.sum() - v.sum()) < 1e-10 * max(1.0, np.abs(v).sum())


def test_gaussian_matrix_is_symmetric_with_unit_spectrum():
    W = explicit_matrix(GAUSS, (3, 4, 5))
    np.testing.assert_allclose(W, W.T, atol=1e-15)
    eig = np.linalg.eigvalsh(W)
    assert eig.min() > -1e-12 and eig.max() < 1 + 1e-12


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 2), st.integers(1, 2),
       st.sampled_from(["max", "one"]), st.booleans())
def test_nlm_weights_normalized(seed, patch, search, center, offset):
    rng = np.random.default_rng(seed)
    v = crandn(rng, (5, 5, 6))
    out, wsum = nlm3d(v, patch, search, center=center, noise_offset=offset,
                      return_weight_sum=True)
    np.testing.assert_allclose(wsum, 1.0, atol=1e-10)
    assert out.shape == v.shape and np.all(np.isfinite(out))


def test_nlm_matches_naive_weights(rng):
    # patch 0: weight between voxels i and j is exp(-max((|v_i|-|v_j|)^2 - 2s^2, 0) / h^2)
    v = crandn(rng, (3, 4, 4))
    h = 0.7
    out = nlm3d(v, patch=0, search=1, h=h, center="one", noise_offset=False)
    pad = np.pad(v, 1, mode="symmetric")
    mag = np.abs(pad)
    want = np.zeros_like(v)
    for z in range(3):
        for y in range(4):
            for x in range(4):
                num, den = 0j, 0.0
                for dz in (-1, 0, 1):
                    for dy in (-1, 0, 1):
                        for dx in (-1, 0, 1):
                            d2 = (mag[z + 1 + dz, y + 1 + dy, x + 1 + dx] - mag[z + 1, y + 1, x + 1]) ** 2
                            w = np.exp(-d2 / h**2)
                            num += w * pad[z + 1 + dz, y + 1 + dy, x + 1 + dx]
                            den += w
                want[z, y, x] = num / den
    np.testing.assert_allclose(out, want, atol=1e-13)


def test_nlm_suppresses_noise(rng):
    clean = np.zeros((8, 8, 8), complex)
    clean[2:6, 2:6, 2:6] = 1.0
    noisy = clean + 0.1 * crandn(rng, clean.shape)
    out = denoise(NLM, noisy)
    assert np.linalg.norm(out - clean) < 0.6 * np.linalg.norm(noisy - clean)


def test_nlm_zero_volume():
    np.testing.assert_array_equal(denoise(NLM, np.zeros((3, 3, 3))), 0)


def test_noise_sigma_estimate(rng):
    assert noise_sigma(0.2 * rng.standard_normal((20, 20, 20))) == pytest.approx(0.2, rel=0.1)


def test_determinism(rng):
    v = crandn(rng, (4, 5, 6))
    for spec in (GAUSS, NLM):
        np.testing.assert_array_equal(denoise(spec, v), denoise(spec, v.copy()))


def test_red_energy_matches_explicit_matrix(rng):
    shape = (2, 3, 4)
    W = explicit_matrix(GAUSS, shape)
    v = crandn(rng, shape)
    x = v.ravel()
    want = 0.5 * np.real(np.vdot(x, (np.eye(x.size) - W) @ x))
    assert red_energy(GAUSS, v) == pytest.approx(want, rel=1e-12)


def test_cyclic_monotonicity_trivial_cases(rng):
    pts = [crandn(rng, (3, 3, 3)) for _ in range(3)]
    assert cyclic_monotonicity_score(DenoiserSpec(), pts) == 0.0
    assert cyclic_monotonicity_score(GAUSS, [pts[0], pts[0]]) == 0.0
    with pytest.raises(ValueError):
        cyclic_monotonicity_score(GAUSS, pts[:1])
    with pytest.raises(ValueError):
        cyclic_monotonicity_score(GAUSS, [pts[0], np.zeros((2, 2, 2))])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_two_point_averaging_matrix(seed):
    # a (1, 1, 2) volume under a radius-1 kernel is a 2x2 symmetric averaging matrix
    rng = np.random.default_rng(seed)
    spec = DenoiserSpec("gaussian3d", {"radius": 1, "sigma": 1.0})
    W = explicit_matrix(spec, (1, 1, 2))
    np.testing.assert_allclose(W, W.T)
    a, b = crandn(rng, (1, 1, 2)), crandn(rng, (1, 1, 2))
    s = cyclic_monotonicity_score(spec, [a, b])
    xa, xb = a.ravel(), b.ravel()
    want = sum(np.real(np.vdot(p - W @ p, W @ p - W @ q)) for p, q in ((xa, xb), (xb, xa)))
    assert s == pytest.approx(want, abs=1e-12)
    assert s >= -1e-12


def test_negative_score_warns_for_nonlinear(monkeypatch, rng):
    import sarred.denoise as dn
    monkeypatch.setattr(dn, "denoise", lambda spec, v: 2.0 * v)
    with pytest.warns(RuntimeWarning, match="cyclic monotonicity"):
        s = dn.cyclic_monotonicity_score(NLM, [crandn(rng, (2, 2, 2)), crandn(rng, (2, 2, 2))])
    assert s < 0


def quadratic(rng, shape):
    A = crandn(rng, (10, int(np.prod(shape))))
    y = crandn(rng, 10)

    def f(u):
        return 0.5 * np.linalg.norm(y - A @ u.ravel()) ** 2

    def grad(u):
        return (A.conj().T @ (A @ u.ravel() - y)).reshape(shape)

    return f, grad


def test_gradient_check_identity_and_zero_lambda(rng):
    shape = (2, 3, 4)
    f, grad = quadratic(rng, shape)
    v = crandn(rng, shape)
    rep = red_gradient_check(DenoiserSpec(), v, f, grad(v), lam=3.0)
    assert rep.max_rel_error < 1e-8
    rep = red_gradient_check(GAUSS, v, f, grad(v), lam=0.0)
    assert rep.max_rel_error < 1e-8


def test_gradient_check_gaussian(rng):
    shape = (4, 4, 5)
    f, grad = quadratic(rng, shape)
    v = crandn(rng, shape)
    rep = red_gradient_check(DenoiserSpec("gaussian3d"), v, f, grad(v), lam=2.5)
    assert rep.strict and rep.passed and rep.max_rel_error < 1e-5
    assert not red_gradient_check(NLM, v, f, grad(v), lam=2.5).strict


def test_gradient_check_detects_wrong_gradient(rng):
    shape = (3, 3, 3)
    f, grad = quadratic(rng, shape)
    v = crandn(rng, shape)
    assert not red_gradient_check(GAUSS, v, f, 1.1 * grad(v), lam=1.0).passed
