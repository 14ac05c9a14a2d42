"""Forward model walkthrough: geometry, operator, echoes and a matched-filter image.

Run: python3 demos/01_forward_model.py
"""

import numpy as np

from sarred.forward import add_noise, apply_forward, build_operator, make_mask, subsample
from sarred.metrics import evaluate
from sarred.model import SceneGrid, Waveform, make_planar_array, scene_preset
from sarred.solvers import matched_filter

# A 6 cm cube half a metre in front of a 17.5 x 17.5 cm planar array.
grid = SceneGrid.centered((12, 12, 12), (0.005, 0.005, 0.005))
geom = make_planar_array(8, 8, 0.175, 0.175, 0.5)
wf = Waveform(37.5e9, 12e9, 8)
A = build_operator(geom, wf, grid)
print(f"operator: {A.shape[0]} echo samples x {A.shape[1]} voxels")
print(f"range resolution c/2B = {wf.c / (2 * wf.bandwidth_hz) * 100:.2f} cm")

# The adjoint really is the adjoint.
rng = np.random.default_rng(0)
x = rng.standard_normal(A.shape[1]) + 1j * rng.standard_normal(A.shape[1])
y = rng.standard_normal(A.shape[0]) + 1j * rng.standard_normal(A.shape[0])
lhs, rhs = np.vdot(y, A.forward(x)), np.vdot(A.adjoint(y), x)
print(f"adjoint relative mismatch: {abs(lhs - rhs) / abs(lhs):.1e}")

scene = scene_preset("wireframe", grid)
print(f"wireframe: {np.count_nonzero(scene.values)} of {grid.n_voxels} voxels occupied")

clean = apply_forward(A, scene)
for sr in (1.0, 0.5, 0.15):
    mask = make_mask(A.shape[0], sr, seed=0)
    noisy = add_noise(subsample(clean, mask), 20.0, seed=1)
    image = matched_filter(subsample(A, mask), noisy.values)
    rep = evaluate(scene, image.volume)
    print(f"matched filter, sampling {sr:4.2f}: PSNR {rep.psnr_db:5.2f} dB  SSIM {rep.ssim:.3f}")
