"""Experiment driver: simulate echoes, reconstruct, score and diagnose.

A run directory holds everything one command produced::

    scene.sarvol              ground truth reflectivity
    echo_clean.npy            full noise-free echo
    cells/<cell>/mask.npy     kept row indices
    cells/<cell>/echo.npy     masked noisy echo
    volumes/<method>_<cell>.sarvol
    traces/<method>_<cell>.csv
    results.csv
    manifest.json

Cells are the ordered product sr x snr x seed. The sampling mask of a cell
uses ``seed`` and its noise uses ``noise_seed_offset + seed``, so a cell is
reproducible on its own.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import platform
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
import scipy

from . import __version__
from .denoise import DenoiserSpec, cyclic_monotonicity_score, red_gradient_check
from .forward import (MeasurementOperator, add_noise, apply_forward, build_operator,
                      make_mask, subsample)
from .io import (ResultRow, dump_config, read_volume, write_results, write_trace,
                 write_volume)
from .metrics import evaluate as score
from .model import Reflectivity, SceneGrid, Waveform, make_planar_array, scene_preset
from .solvers import (SolverConfig, admm_reg, matched_filter, pnp_admm, red_admm,
                      red_gap)

ADJOINT_TOL = 1e-10
GRADIENT_TOL = 1e-5


@dataclass(frozen=True)
class Cell:
    sr: float
    snr_db: float
    seed: int

    @property
    def tag(self) -> str:
        snr = "inf" if math.isinf(self.snr_db) else f"{self.snr_db:g}"
        return f"sr{self.sr:g}_snr{snr}_seed{self.seed}"


@dataclass
class Setup:
    grid: SceneGrid
    operator: MeasurementOperator
    scene: Reflectivity


def cells(cfg) -> list[Cell]:
    sw = cfg["sweep"]
    return [Cell(float(sr), float(snr), int(seed))
            for sr in sw["sr"] for snr in sw["snr_db"] for seed in sw["seeds"]]


def build_setup(cfg) -> Setup:
    sc, ar, wf = cfg["scene"], cfg["array"], cfg["waveform"]
    grid = SceneGrid.centered(sc["dims"], sc["spacing"])
    geom = make_planar_array(ar["n_az"], ar["n_el"], ar["size_az"], ar["size_el"],
                             ar["standoff"])
    waveform = Waveform(wf["carrier_hz"], wf["bandwidth_hz"], wf["n_freq"])
    A = build_operator(geom, waveform, grid, explicit=cfg["operator"]["explicit"])
    scene = scene_preset(sc["preset"], grid, seed=sc["seed"], stride=sc["stride"])
    return Setup(grid, A, scene)


_SETUP_CACHE: dict = {}


def _cached_setup(cfg) -> Setup:
    key = json.dumps({k: cfg[k] for k in ("scene", "array", "waveform", "operator")},
                     sort_keys=True)
    if key not in _SETUP_CACHE:
        _SETUP_CACHE.clear()
        _SETUP_CACHE[key] = build_setup(cfg)
    return _SETUP_CACHE[key]


def simulate_cell(setup: Setup, cfg, cell: Cell):
    """Mask and masked noisy echo of one cell."""
    mask = make_mask(setup.operator.shape[0], cell.sr, cell.seed)
    clean = subsample(apply_forward(setup.operator, setup.scene), mask)
    noise_seed = cfg["sweep"]["noise_seed_offset"] + cell.seed
    return mask, add_noise(clean, cell.snr_db, noise_seed)


def method_settings(cfg, method) -> dict:
    """Solver settings for one method: global solver block plus overrides."""
    out = dict(cfg["solver"])
    out["denoiser"] = cfg["denoiser"]
    out.update(cfg["methods"].get(method, {}))
    return out


def solver_config(cfg, method, A, y) -> tuple[SolverConfig, DenoiserSpec]:
    s = method_settings(cfg, method)
    extra = {k: s[k] for k in ("t_max", "eps", "inner_J", "cg_tol", "cg_max", "theta")}
    if s.get("lam") is not None:
        lam = float(s["lam"])
        sc = SolverConfig(lam=lam, mu=float(s["mu_scale"]) * lam, **extra)
    else:
        sc = SolverConfig.scaled(A, y, s["lam_scale"], s["mu_scale"], **extra)
    if method == "red_gap" and s.get("lam") is None:
        # the projection step has no penalty, so the prior weight is lam / mu
        sc = replace(sc, lam=sc.lam / sc.mu)
    den = s["denoiser"]
    return sc, DenoiserSpec(den["kind"], dict(den.get("params") or {}))


def run_method(cfg, method, A, y):
    if method == "mf":
        return matched_filter(A, y)
    sc, spec = solver_config(cfg, method, A, y)
    if method in ("l1", "mcp"):
        return admm_reg(A, y, method, sc)
    solver = {"pnp": pnp_admm, "red_admm": red_admm, "red_gap": red_gap}[method]
    return solver(A, y, spec, sc)


def _cell_paths(out, cell):
    d = os.path.join(out, "cells", cell.tag)
    return os.path.join(d, "mask.npy"), os.path.join(d, "echo.npy")


def _load_cell(setup, cfg, out, cell):
    mask_path, echo_path = _cell_paths(out, cell)
    if os.path.exists(mask_path) and os.path.exists(echo_path):
        kept = np.load(mask_path)
        mask = make_mask(setup.operator.shape[0], cell.sr, cell.seed)
        if not np.array_equal(kept, mask.kept_rows):
            raise ValueError(f"{mask_path} does not match the configured sampling")
        return mask, np.load(echo_path)
    mask, echo = simulate_cell(setup, cfg, cell)
    return mask, echo.values


def run_cell(cfg, out, cell: Cell) -> list[ResultRow]:
    """Reconstruct one cell with every configured method and write its artifacts.

    A failing method becomes a row with an error tag.
    """
    setup = _cached_setup(cfg)
    mask, y = _load_cell(setup, cfg, out, cell)
    A = subsample(setup.operator, mask)
    opts = cfg["output"]
    rows = []
    for method in cfg["sweep"]["methods"]:
        row = ResultRow(method, cell.sr, cell.snr_db, cell.seed)
        try:
            t0 = time.perf_counter()
            res = run_method(cfg, method, A, y)
            elapsed = time.perf_counter() - t0
        except Exception as exc:  # recorded, the sweep carries on
            row.error = f"{type(exc).__name__}: {exc}".replace("\n", " ")
            rows.append(row)
            continue
        rep = score(setup.scene, res.volume)
        row.psnr_db, row.ssim, row.nmse = rep.psnr_db, rep.ssim, rep.nmse
        row.iterations = res.iterations
        row.final_residual = float(res.trace.final_residual)
        if opts["wall_time"]:
            row.wall_seconds = elapsed
        else:
            for rec in res.trace.records:
                rec.wall_time = math.nan
        name = f"{method}_{cell.tag}"
        if opts["volumes"]:
            write_volume(os.path.join(out, "volumes", name + ".sarvol"), res.volume)
        if opts["traces"]:
            write_trace(os.path.join(out, "traces", name + ".csv"), res.trace)
        rows.append(row)
    return rows


def _run_cell_args(args):
    return run_cell(*args)


def _prepare(out, sub=()):
    os.makedirs(out, exist_ok=True)
    for s in sub:
        os.makedirs(os.path.join(out, s), exist_ok=True)


def simulate(cfg, out) -> int:
    setup = _cached_setup(cfg)
    _prepare(out, ["cells"])
    write_volume(os.path.join(out, "scene.sarvol"), setup.scene)
    np.save(os.path.join(out, "echo_clean.npy"), apply_forward(setup.operator, setup.scene).values)
    for cell in cells(cfg):
        mask, echo = simulate_cell(setup, cfg, cell)
        mask_path, echo_path = _cell_paths(out, cell)
        os.makedirs(os.path.dirname(mask_path), exist_ok=True)
        np.save(mask_path, np.asarray(mask.kept_rows))
        np.save(echo_path, echo.values)
    write_manifest(cfg, out, "simulate")
    return 0


def reconstruct(cfg, out, jobs=1) -> int:
    """Run every method on every cell; echoes written by ``simulate`` are reused."""
    setup = _cached_setup(cfg)
    _prepare(out, ["volumes", "traces"])
    write_volume(os.path.join(out, "scene.sarvol"), setup.scene)
    todo = [(cfg, out, c) for c in cells(cfg)]
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            per_cell = list(pool.map(_run_cell_args, todo))
    else:
        per_cell = [run_cell(*t) for t in todo]
    rows = [r for group in per_cell for r in group]
    write_results(os.path.join(out, "results.csv"), rows)
    write_manifest(cfg, out, "reconstruct")
    return 0 if all(not r.error for r in rows) else 1


def sweep(cfg, out, jobs=1) -> int:
    simulate(cfg, out)
    status = reconstruct(cfg, out, jobs)
    write_manifest(cfg, out, "sweep")
    return status


def evaluate(cfg, out, ref=None, est=()) -> int:
    """Score volumes against a reference.

    With explicit ``est`` paths each one is scored against ``ref`` (default:
    the run's scene). Otherwise every volume under ``out/volumes`` is scored
    and the table is written to ``out/evaluation.csv``.
    """
    ref_path = ref or os.path.join(out, "scene.sarvol")
    reference = read_volume(ref_path) if os.path.exists(ref_path) else _cached_setup(cfg).scene
    if est:
        for path in est:
            rep = score(reference, read_volume(path))
            print(json.dumps({"volume": path, "psnr_db": float(rep.psnr_db),
                              "ssim": float(rep.ssim), "nmse": float(rep.nmse)}))
        return 0
    vol_dir = os.path.join(out, "volumes")
    names = sorted(os.listdir(vol_dir)) if os.path.isdir(vol_dir) else []
    lines = ["volume,psnr_db,ssim,nmse"]
    for name in names:
        rep = score(reference, read_volume(os.path.join(vol_dir, name)))
        lines.append(",".join([name] + [repr(float(x)) for x in (rep.psnr_db, rep.ssim, rep.nmse)]))
    with open(os.path.join(out, "evaluation.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    write_manifest(cfg, out, "evaluate")
    return 0


def diagnose(cfg, out) -> int:
    """Adjoint test, gradient check and cyclic monotonicity on solver iterates.

    Writes ``diagnose.json``. Returns 1 if a strict check fails; a negative
    monotonicity score of a nonlinear denoiser is only a warning.
    """
    setup = _cached_setup(cfg)
    A = setup.operator
    rng = np.random.default_rng(0)
    report = {}

    x = rng.standard_normal(A.shape[1]) + 1j * rng.standard_normal(A.shape[1])
    y = rng.standard_normal(A.shape[0]) + 1j * rng.standard_normal(A.shape[0])
    lhs, rhs = np.vdot(y, A.forward(x)), np.vdot(A.adjoint(y), x)
    err = float(abs(lhs - rhs) / max(abs(lhs), abs(rhs)))
    report["adjoint"] = {"rel_error": err, "status": "pass" if err < ADJOINT_TOL else "fail"}

    den = cfg["denoiser"]
    spec = DenoiserSpec(den["kind"], dict(den.get("params") or {}))
    gauss = DenoiserSpec("gaussian3d") if spec.kind != "identity" else spec
    cell = cells(cfg)[0]
    mask, yc = simulate_cell(setup, cfg, cell)
    As = subsample(A, mask)
    v = rng.standard_normal(setup.grid.shape) + 1j * rng.standard_normal(setup.grid.shape)
    yv = yc.values

    def f(u):
        return 0.5 * float(np.linalg.norm(yv - As.forward(u)) ** 2)

    f_grad = As.adjoint(As.forward(v) - yv).reshape(v.shape)
    sc, _ = solver_config(cfg, "red_admm", As, yv)
    chk = red_gradient_check(gauss, v, f, f_grad, sc.lam, tol=GRADIENT_TOL)
    report["gradient"] = {"denoiser": gauss.kind, "max_rel_error": chk.max_rel_error,
                          "status": "pass" if chk.passed else "fail"}

    iterates = []
    for t in (1, 2, 4, 8):
        res = red_admm(As, yv, spec, replace(sc, t_max=t, eps=1e-300, log_prior=False))
        iterates.append(res.volume.volume)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        s = cyclic_monotonicity_score(spec, iterates)
    status = "pass" if s >= 0 or spec.kind == "identity" else ("warn" if not spec.is_linear else "fail")
    report["cyclic_monotonicity"] = {"denoiser": spec.kind, "score": s, "status": status,
                                     "warnings": [str(w.message) for w in caught]}
    _prepare(out)
    with open(os.path.join(out, "diagnose.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_manifest(cfg, out, "diagnose")
    return 1 if any(r["status"] == "fail" for r in report.values()) else 0


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(cfg, out, command) -> str:
    """Config echo, artifact hashes and library versions for replay."""
    artifacts = {}
    for root, _, files in os.walk(out):
        for name in files:
            if name == "manifest.json":
                continue
            path = os.path.join(root, name)
            artifacts[os.path.relpath(path, out).replace(os.sep, "/")] = _sha256(path)
    manifest = {
        "command": command,
        "config": dump_config(cfg),
        "artifacts": dict(sorted(artifacts.items())),
        "versions": {"sarred": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }
    path = os.path.join(out, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
