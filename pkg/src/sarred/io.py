"""File formats: binary volumes, YAML run configs, CSV traces and result tables.

Volume file layout (all little-endian)::

    offset  size  content
    0       7     b"SARVOL1"
    7       12    dims Nx, Ny, Nz as uint32
    19      48    spacing (dx, dy, dz), origin (x0, y0, z0) as float64
    67      8*N   interleaved (real, imag) float32 in volume order
"""

from __future__ import annotations

import copy
import csv
import math
import os
import struct
from dataclasses import dataclass, fields

import numpy as np
import yaml

from .model import Reflectivity, SceneGrid

MAGIC = b"SARVOL1"
_HEADER = struct.Struct("<3I6d")
HEADER_SIZE = len(MAGIC) + _HEADER.size
_MAX_VOXELS = 2**31


class FormatError(ValueError):
    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


def write_volume(path, v: Reflectivity) -> None:
    g = v.grid
    payload = np.empty(2 * g.n_voxels, dtype="<f4")
    payload[0::2] = v.values.real
    payload[1::2] = v.values.imag
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(*g.dims, *g.spacing, *g.origin))
        fh.write(payload.tobytes())


def read_volume(path) -> Reflectivity:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(MAGIC)] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:len(MAGIC)]!r}", 0)
    if len(raw) < HEADER_SIZE:
        raise FormatError(f"{path}: truncated header", len(raw))
    vals = _HEADER.unpack_from(raw, len(MAGIC))
    dims, spacing, origin = vals[:3], vals[3:6], vals[6:]
    n = dims[0] * dims[1] * dims[2]
    if n == 0 or n > _MAX_VOXELS:
        raise FormatError(f"{path}: invalid dims {dims}", len(MAGIC))
    try:
        grid = SceneGrid(dims, spacing, origin)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}", len(MAGIC) + 12) from None
    expected = HEADER_SIZE + 8 * n
    if len(raw) < expected:
        raise FormatError(
            f"{path}: truncated payload, {(len(raw) - HEADER_SIZE) // 8} of {n} complex values",
            len(raw),
        )
    if len(raw) > expected:
        raise FormatError(f"{path}: {len(raw) - expected} trailing bytes", expected)
    payload = np.frombuffer(raw, dtype="<f4", count=2 * n, offset=HEADER_SIZE)
    values = payload[0::2].astype(np.float64) + 1j * payload[1::2].astype(np.float64)
    return Reflectivity(grid, values)


# ----------------------------------------------------------------------------
# run configuration

DEFAULT_CONFIG = {
    "scene": {
        "preset": "wireframe",
        "dims": [16, 16, 16],
        "spacing": [0.005, 0.005, 0.005],
        "seed": 0,
        "stride": 4,
    },
    "array": {"n_az": 8, "n_el": 8, "size_az": 0.175, "size_el": 0.175, "standoff": 0.5},
    "waveform": {"carrier_hz": 37.5e9, "bandwidth_hz": 12.0e9, "n_freq": 8},
    "operator": {"explicit": True},
    "sweep": {
        "sr": [0.75, 0.5, 0.25, 0.15],
        "snr_db": [20.0],
        "seeds": [0, 1, 2],
        "methods": ["mf", "l1", "mcp", "pnp", "red_admm", "red_gap"],
        "noise_seed_offset": 1000,
    },
    "solver": {
        "t_max": 50,
        "eps": 1.0e-3,
        "inner_J": 3,
        "cg_tol": 1.0e-8,
        "cg_max": 200,
        "theta": 3.0,
        "lam_scale": 0.1,
        "mu_scale": 1.0,
    },
    "methods": {
        "l1": {},
        "mcp": {},
        "pnp": {},
        "red_admm": {},
        "red_gap": {},
    },
    "denoiser": {"kind": "nlm3d", "params": {"patch": 0}},
    "output": {"dir": "runs/default", "volumes": True, "traces": True, "wall_time": False},
}

_METHOD_KEYS = {"lam_scale", "mu_scale", "lam", "t_max", "eps", "inner_J", "theta",
                "cg_tol", "cg_max", "denoiser"}
METHODS = ("mf", "l1", "mcp", "pnp", "red_admm", "red_gap")


class ConfigError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def _merge(base, override, path):
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(where, "unknown key")
        if isinstance(base[key], dict) and key not in ("params",):
            if not isinstance(val, dict):
                raise ConfigError(where, "expected a mapping")
            if path == "" and key == "methods":
                out[key] = _merge_methods(base[key], val)
            else:
                out[key] = _merge(base[key], val, where)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _merge_methods(base, override):
    out = copy.deepcopy(base)
    for name, val in override.items():
        if name not in base:
            raise ConfigError(f"methods.{name}", "unknown method")
        val = val or {}
        bad = set(val) - _METHOD_KEYS
        if bad:
            raise ConfigError(f"methods.{name}.{sorted(bad)[0]}", "unknown key")
        out[name] = {**out[name], **copy.deepcopy(val)}
    return out


def _validate(cfg):
    def need(cond, path, msg):
        if not cond:
            raise ConfigError(path, msg)

    sc = cfg["scene"]
    need(sc["preset"] in ("single_point", "point_grid", "wireframe"), "scene.preset", "unknown preset")
    need(len(sc["dims"]) == 3 and all(int(n) >= 1 for n in sc["dims"]), "scene.dims", "need 3 positive ints")
    need(len(sc["spacing"]) == 3 and all(float(s) > 0 for s in sc["spacing"]), "scene.spacing",
         "need 3 positive values")
    need(isinstance(sc["seed"], int), "scene.seed", "seed must be an explicit integer")
    sw = cfg["sweep"]
    need(all(0 < float(s) <= 1 for s in sw["sr"]) and sw["sr"], "sweep.sr", "values must lie in (0, 1]")
    need(sw["snr_db"], "sweep.snr_db", "need at least one SNR")
    need(sw["seeds"] and all(isinstance(s, int) for s in sw["seeds"]), "sweep.seeds",
         "seeds must be explicit integers")
    need(isinstance(sw["noise_seed_offset"], int), "sweep.noise_seed_offset", "must be an integer")
    for i, m in enumerate(sw["methods"]):
        need(m in METHODS, f"sweep.methods[{i}]", f"unknown method {m!r}")
    need(cfg["denoiser"]["kind"] in ("identity", "gaussian3d", "nlm3d", "external"),
         "denoiser.kind", "unknown denoiser")
    return cfg


def _parse_snr(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    return float(v)


def parse_override(text):
    """``a.b.c=value`` into a nested mapping (value parsed as YAML)."""
    if "=" not in text:
        raise ConfigError(text, "override must look like key=value")
    key, raw = text.split("=", 1)
    val = yaml.safe_load(raw)
    node = val
    for part in reversed(key.strip().split(".")):
        node = {part: node}
    return node


def _deep_update(dst, src):
    # an empty mapping replaces instead of merging, so ``params={}`` clears
    for k, v in src.items():
        if isinstance(v, dict) and v and isinstance(dst.get(k), dict):
            _deep_update(dst[k], v)
        else:
            dst[k] = v
    return dst


def load_config(path=None, overrides=()) -> dict:
    """Load a YAML run config over the defaults; unknown keys are rejected."""
    user = {}
    if path is not None:
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ConfigError(str(path), "top level must be a mapping")
    for text in overrides:
        _deep_update(user, parse_override(text))
    cfg = _merge(DEFAULT_CONFIG, user, "")
    cfg["sweep"]["snr_db"] = [_parse_snr(s) for s in cfg["sweep"]["snr_db"]]
    cfg["sweep"]["sr"] = [float(s) for s in cfg["sweep"]["sr"]]
    return _validate(cfg)


def dump_config(cfg) -> str:
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if isinstance(obj, float) and math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj

    return yaml.safe_dump(clean(cfg), sort_keys=True)


# ----------------------------------------------------------------------------
# tables

TRACE_COLUMNS = ("t", "residual", "data_fidelity", "prior", "wall_time",
                 "cg_iterations", "cg_converged")


@dataclass
class ResultRow:
    method: str
    sr: float
    snr_db: float
    seed: int
    psnr_db: float = math.nan
    ssim: float = math.nan
    nmse: float = math.nan
    iterations: int = 0
    final_residual: float = math.nan
    wall_seconds: float = math.nan
    error: str = ""

    def __eq__(self, other):
        if not isinstance(other, ResultRow):
            return NotImplemented
        for f in fields(self):
            a, b = getattr(self, f.name), getattr(other, f.name)
            if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
                continue
            if a != b:
                return False
        return True


RESULT_COLUMNS = tuple(f.name for f in fields(ResultRow))


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    # one record per line, even for multi-line error messages
    return " ".join(str(v).splitlines()) if isinstance(v, str) else str(v)


def _write_csv(path, header, rows, append):
    exists = append and os.path.exists(path) and os.path.getsize(path) > 0
    try:
        with open(path, "a" if exists else "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if not exists:
                w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror}") from exc


def write_trace(path, trace, append=False) -> None:
    rows = [[getattr(r, c) for c in TRACE_COLUMNS] for r in trace.records]
    _write_csv(path, TRACE_COLUMNS, rows, append)


def read_trace(path) -> list[dict]:
    with open(path, newline="") as fh:
        out = []
        for rec in csv.DictReader(fh):
            out.append({
                "t": int(rec["t"]),
                "residual": float(rec["residual"]),
                "data_fidelity": float(rec["data_fidelity"]),
                "prior": float(rec["prior"]),
                "wall_time": float(rec["wall_time"]),
                "cg_iterations": int(rec["cg_iterations"]),
                "cg_converged": rec["cg_converged"] == "1",
            })
        return out


def write_results(path, rows, append=False) -> None:
    table = [[getattr(r, c) for c in RESULT_COLUMNS] for r in rows]
    _write_csv(path, RESULT_COLUMNS, table, append)


def read_results(path) -> list[ResultRow]:
    kinds = {f.name: f.type for f in fields(ResultRow)}
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise FormatError(f"{path}: unexpected header {reader.fieldnames}", 0)
        for rec in reader:
            vals = {}
            for name, raw in rec.items():
                kind = kinds[name]
                if kind == "int":
                    vals[name] = int(raw)
                elif kind == "float":
                    vals[name] = float(raw)
                else:
                    vals[name] = raw
            rows.append(ResultRow(**vals))
    return rows
