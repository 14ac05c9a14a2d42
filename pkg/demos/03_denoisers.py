"""Denoisers and the diagnostics that go with the RED prior.

Run: python3 demos/03_denoisers.py
"""

import numpy as np

from sarred.denoise import (DenoiserSpec, cyclic_monotonicity_score, denoise, red_energy,
                            red_gradient_check)
from sarred.metrics import psnr
from sarred.model import SceneGrid, scene_preset

grid = SceneGrid.centered((16, 16, 16), (0.005, 0.005, 0.005))
clean = scene_preset("wireframe", grid).volume
rng = np.random.default_rng(0)
noisy = clean + 0.08 * (rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape))
print(f"noisy input: {psnr(clean, noisy):.2f} dB")

specs = {
    "gaussian r2": DenoiserSpec("gaussian3d"),
    "nlm p1 s2": DenoiserSpec("nlm3d"),
    "nlm p0 s2": DenoiserSpec("nlm3d", {"patch": 0}),
}
for name, spec in specs.items():
    print(f"{name:<12} {psnr(clean, denoise(spec, noisy)):6.2f} dB  RED energy {red_energy(spec, noisy):8.3f}")

# Patches of radius 1 mix each one-voxel line with empty space, which
# blurs thin structure; radius 0 compares single voxels.

# For a linear symmetric denoiser the RED gradient is exact.
def f(u):
    return 0.5 * float(np.linalg.norm(u - noisy) ** 2)

v = noisy + 0.01
rep = red_gradient_check(specs["gaussian r2"], v, f, v - noisy, lam=2.0)
print(f"gaussian gradient check: max rel error {rep.max_rel_error:.1e} (passed={rep.passed})")

# Cyclic monotonicity on a short cycle of perturbed volumes. NLM may go
# negative here, which only warns.
cycle = [noisy + 0.05 * k * rng.standard_normal(clean.shape) for k in range(4)]
for name, spec in specs.items():
    print(f"{name:<12} cyclic monotonicity score {cyclic_monotonicity_score(spec, cycle):+.3e}")
