"""Compare the six reconstruction methods on one undersampled, noisy cell.

Run: python3 demos/02_solvers.py   (about a minute)
"""

from sarred import experiment
from sarred.experiment import Cell
from sarred.forward import subsample
from sarred.io import load_config
from sarred.metrics import evaluate

cfg = load_config(None, ["scene.dims=[12, 12, 12]"])
setup = experiment.build_setup(cfg)
mask, y = experiment.simulate_cell(setup, cfg, Cell(0.5, 20.0, 0))
A = subsample(setup.operator, mask)

print(f"{'method':<9} {'PSNR':>6} {'SSIM':>6} {'iters':>5}  final Re")
for method in cfg["sweep"]["methods"]:
    res = experiment.run_method(cfg, method, A, y.values)
    rep = evaluate(setup.scene, res.volume)
    tail = f"{res.trace.final_residual:.2e}" if method != "mf" else "-"
    print(f"{method:<9} {rep.psnr_db:6.2f} {rep.ssim:6.3f} {res.iterations:5d}  {tail}")

# Per-method overrides work the same way as on the command line.
cfg = load_config(None, ["scene.dims=[12, 12, 12]", "methods.red_admm.t_max=150"])
res = experiment.run_method(cfg, "red_admm", A, y.values)
print(f"red_admm with t_max=150 stops after {res.iterations} iterations, "
      f"PSNR {evaluate(setup.scene, res.volume).psnr_db:.2f} dB")
