"""Reconstruction algorithms.

All iterative solvers share the splitting ``min f(x) + lam g(v)`` with
``v = x``, the scaled dual ``d`` updated as ``d_t = d_{t-1} - x_t + v_t``,
and the x-step ``(A^H A + mu I) x = A^H y + mu (v + d)`` solved by
matrix-free conjugate gradients. Volumes are handled as ``(Nz, Ny, Nx)``
complex arrays.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .denoise import DenoiserSpec, denoise, red_energy
from .forward import MeasurementOperator
from .model import Reflectivity
from .prox import mcp_penalty, mcp_threshold, soft_threshold

DIVERGENCE_LIMIT = 1e6


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    """Solver knobs.

    ``lam`` weights the prior and ``mu`` is the ADMM penalty. For
    :func:`red_gap` ``lam`` is the dimensionless prior weight against the
    unit proximity term and ``mu`` is unused. ``sigma_absorbed`` records
    that the noise variance is folded into ``lam`` (the data term is
    ``0.5 ||y - Ax||^2``); it is informational only.
    """

    lam: float
    mu: float
    t_max: int = 50
    eps: float = 1e-3
    inner_J: int = 3
    cg_tol: float = 1e-8
    cg_max: int = 200
    theta: float = 3.0
    sigma_absorbed: bool = True
    log_prior: bool = True

    def __post_init__(self):
        if not self.lam > 0 or not self.mu > 0:
            raise ValueError("lam and mu must be positive")
        if int(self.t_max) < 1 or int(self.inner_J) < 1 or int(self.cg_max) < 1:
            raise ValueError("t_max, inner_J and cg_max must be >= 1")
        if not self.eps > 0 or not self.cg_tol > 0:
            raise ValueError("eps and cg_tol must be positive")
        if not self.theta > 1:
            raise ValueError("theta must exceed 1")

    @classmethod
    def scaled(cls, A, y, lam_scale=0.1, mu_scale=1.0, **kwargs) -> SolverConfig:
        """Config with ``lam = lam_scale * max|A^H y|`` and ``mu = mu_scale * lam``."""
        peak = float(np.max(np.abs(A.adjoint(_echo(y)))))
        if peak == 0.0:
            peak = 1.0
        lam = lam_scale * peak
        return cls(lam=lam, mu=mu_scale * lam, **kwargs)


@dataclass
class TraceRecord:
    t: int
    residual: float
    data_fidelity: float
    prior: float
    wall_time: float
    cg_iterations: int = 0
    cg_converged: bool = True


@dataclass
class SolverTrace:
    records: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.records])

    @property
    def final_residual(self) -> float:
        return self.records[-1].residual if self.records else float("nan")


@dataclass
class ReconstructionResult:
    volume: Reflectivity
    trace: SolverTrace
    config: SolverConfig | None
    method: str
    state: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.trace)


@dataclass
class CGInfo:
    iterations: int
    rel_residual: float
    converged: bool


def _echo(y):
    return np.asarray(getattr(y, "values", y)).reshape(-1)


def conjugate_gradient(apply_op, b, x0=None, tol=1e-8, maxiter=200):
    """CG for a Hermitian positive-definite operator given as a callable.

    Stops when ``||b - op(x)|| <= tol ||b||``.
    """
    b = np.asarray(b, dtype=complex)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b), CGInfo(0, 0.0, True)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=complex)
    r = b - apply_op(x) if x0 is not None else b.copy()
    p = r.copy()
    rs = np.real(np.vdot(r, r))
    it = 0
    while np.sqrt(rs) > tol * bnorm and it < maxiter:
        ap = apply_op(p)
        alpha = rs / np.real(np.vdot(p, ap))
        x += alpha * p
        r -= alpha * ap
        rs_new = np.real(np.vdot(r, r))
        p = r + (rs_new / rs) * p
        rs = rs_new
        it += 1
    rel = float(np.sqrt(rs) / bnorm)
    return x, CGInfo(it, rel, rel <= tol)


def solve_x_subproblem(A, y, v, d, mu, cg_tol=1e-8, cg_max=200, x0=None, aty=None):
    """Solve ``(A^H A + mu I) x = A^H y + mu (v + d)`` by CG.

    Returns the solution volume and a :class:`CGInfo`; ``converged`` is
    False when ``cg_max`` steps did not reach ``cg_tol``.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    v = np.asarray(v)
    shape = v.shape
    if aty is None:
        aty = A.adjoint(_echo(y))
    rhs = aty + mu * (v.reshape(-1) + np.asarray(d).reshape(-1))
    if not np.all(np.isfinite(rhs)):
        raise ValueError("non-finite input to the x-subproblem")

    def normal(u):
        return A.adjoint(A.forward(u)) + mu * u

    start = None if x0 is None else np.asarray(x0).reshape(-1)
    x, info = conjugate_gradient(normal, rhs, start, cg_tol, cg_max)
    return x.reshape(shape), info


def residual(x_t, x_prev) -> float:
    """Relative change ``||x_t - x_prev|| / ||x_prev||``.

    0 when both are zero, ``inf`` when only ``x_prev`` is zero.
    """
    x_t = np.asarray(x_t)
    x_prev = np.asarray(x_prev)
    if x_t.shape != x_prev.shape:
        raise ValueError("shape mismatch")
    den = np.linalg.norm(x_prev)
    num = np.linalg.norm(x_t - x_prev)
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return float(num / den)


def _check(A, y):
    y = _echo(y)
    if y.size != A.shape[0]:
        raise ValueError(f"echo has {y.size} samples, operator has {A.shape[0]} rows")
    return y


def matched_filter(A: MeasurementOperator, y) -> ReconstructionResult:
    """Adjoint image ``A^H y / M``."""
    t0 = time.perf_counter()
    y = _check(A, y)
    img = A.adjoint(y) / A.shape[0]
    rec = TraceRecord(1, 0.0, 0.5 * float(np.linalg.norm(y - A.forward(img)) ** 2),
                      float("nan"), time.perf_counter() - t0)
    return ReconstructionResult(Reflectivity(A.grid, img), SolverTrace([rec]), None, "mf")


def _admm(A, y, cfg, method, v_update, prior):
    """Shared ADMM loop; ``v_update(x, d, v_prev)`` returns the new split variable."""
    y = _check(A, y)
    shape = A.grid.shape
    aty = A.adjoint(y)
    v = np.zeros(shape, dtype=complex)
    d = np.zeros(shape, dtype=complex)
    x_prev = np.zeros(shape, dtype=complex)
    x = None
    trace = SolverTrace()
    t0 = time.perf_counter()
    for t in range(1, cfg.t_max + 1):
        x, info = solve_x_subproblem(A, y, v, d, cfg.mu, cfg.cg_tol, cfg.cg_max,
                                     x0=x_prev if t > 1 else None, aty=aty)
        if not info.converged:
            trace.warnings.append(f"t={t}: CG stopped at relative residual {info.rel_residual:.2e}")
        v = v_update(x, d, v)
        d = d - x + v
        re = residual(x, x_prev)
        fid = 0.5 * float(np.linalg.norm(y - A.forward(x)) ** 2)
        trace.records.append(TraceRecord(t, re, fid, prior(v), time.perf_counter() - t0,
                                         info.iterations, info.converged))
        if t > 1 and re > DIVERGENCE_LIMIT:
            raise DivergenceError(f"{method}: residual {re:.3e} at t={t} exceeds {DIVERGENCE_LIMIT:g}")
        x_prev = x
        if re < cfg.eps:
            break
    return ReconstructionResult(Reflectivity(A.grid, x), trace, cfg, method,
                                state={"v": v, "d": d})


def admm_reg(A, y, prox_kind: str, cfg: SolverConfig) -> ReconstructionResult:
    """ADMM with an L1 or MCP prior; the v-step thresholds ``x - d`` at ``lam / mu``."""
    thr = cfg.lam / cfg.mu
    if prox_kind == "l1":
        def v_update(x, d, _):
            return soft_threshold(x - d, thr)

        def prior(v):
            return float(np.sum(np.abs(v)))
    elif prox_kind == "mcp":
        def v_update(x, d, _):
            return mcp_threshold(x - d, thr, cfg.theta)

        def prior(v):
            return mcp_penalty(v, thr, cfg.theta)
    else:
        raise ValueError(f"unknown prox kind {prox_kind!r}")
    return _admm(A, y, cfg, prox_kind, v_update, prior)


def pnp_admm(A, y, spec: DenoiserSpec, cfg: SolverConfig) -> ReconstructionResult:
    """Plug-and-play ADMM: the v-step is ``D(x - d)``."""
    def v_update(x, d, _):
        return denoise(spec, x - d)

    return _admm(A, y, cfg, "pnp", v_update, lambda v: float("nan"))


def red_fixed_point(spec, v0, target, weight, n_steps):
    """``n_steps`` of ``m <- (weight D(m) + target) / (weight + 1)`` from ``v0``."""
    m = v0
    for _ in range(n_steps):
        m = (weight * denoise(spec, m) + target) / (weight + 1.0)
    return m


def red_admm(A, y, spec: DenoiserSpec, cfg: SolverConfig) -> ReconstructionResult:
    """RED prior solved by ADMM with an inner fixed-point v-step.

    Each outer step runs ``inner_J`` iterations of
    ``m_j = (lam D(m_{j-1}) + mu (x_t - d_{t-1})) / (lam + mu)`` from
    ``m_0 = v_{t-1}``.
    """
    ratio = cfg.lam / cfg.mu

    def v_update(x, d, v_prev):
        return red_fixed_point(spec, v_prev, x - d, ratio, cfg.inner_J)

    def prior(v):
        return red_energy(spec, v) if cfg.log_prior else float("nan")

    return _admm(A, y, cfg, "red_admm", v_update, prior)


def stationarity_residual(result: ReconstructionResult, spec: DenoiserSpec) -> float:
    """Relative residual of ``mu (v - x_t + d_{t-1}) + lam (v - D(v)) = 0``.

    Normalized by ``||mu (x_t - d_{t-1})||``; ``d_{t-1}`` is recovered from
    the final dual via the update rule.
    """
    cfg = result.config
    x = result.volume.volume
    v, d = result.state["v"], result.state["d"]
    d_prev = d + x - v
    r = cfg.mu * (v - x + d_prev) + cfg.lam * (v - denoise(spec, v))
    scale = np.linalg.norm(cfg.mu * (x - d_prev))
    return float(np.linalg.norm(r) / scale) if scale > 0 else float(np.linalg.norm(r))


class _GramSolver:
    """CG on ``(A A^H + jitter I) z = r`` in measurement space."""

    def __init__(self, A, tol, maxiter, jitter=1e-10):
        self.A = A
        self.tol, self.maxiter = tol, maxiter
        if A.explicit:
            mat = A.matrix()
            self.gram = mat @ mat.conj().T
            diag = float(np.real(np.trace(self.gram))) / max(A.shape[0], 1)
        else:
            self.gram = None
            diag = float(A.shape[1])
        self.jitter = jitter * diag

    def apply(self, z):
        if self.gram is not None:
            return self.gram @ z + self.jitter * z
        return self.A.forward(self.A.adjoint(z)) + self.jitter * z

    def solve(self, r, z0=None):
        return conjugate_gradient(self.apply, r, z0, self.tol, self.maxiter)


def red_gap(A, y, spec: DenoiserSpec, cfg: SolverConfig) -> ReconstructionResult:
    """Generalized alternating projection with a RED prior.

    ``x_t`` is the Euclidean projection of ``v_{t-1}`` onto ``{x : Ax = y}``
    and ``v_t`` runs ``inner_J`` steps of ``v = (x_t + lam D(v)) / (1 + lam)``
    from ``v_{t-1}``.
    """
    y = _check(A, y)
    shape = A.grid.shape
    gram = _GramSolver(A, cfg.cg_tol, cfg.cg_max)
    v = np.zeros(shape, dtype=complex)
    x_prev = np.zeros(shape, dtype=complex)
    x = v
    z = None
    trace = SolverTrace()
    t0 = time.perf_counter()
    for t in range(1, cfg.t_max + 1):
        r = y - A.forward(v)
        z, info = gram.solve(r, z)
        if not info.converged:
            trace.warnings.append(f"t={t}: CG stopped at relative residual {info.rel_residual:.2e}")
        x = v + A.adjoint(z).reshape(shape)
        v = red_fixed_point(spec, v, x, cfg.lam, cfg.inner_J)
        re = residual(x, x_prev)
        fid = 0.5 * float(np.linalg.norm(y - A.forward(x)) ** 2)
        prior = red_energy(spec, v) if cfg.log_prior else float("nan")
        trace.records.append(TraceRecord(t, re, fid, prior, time.perf_counter() - t0,
                                         info.iterations, info.converged))
        if t > 1 and re > DIVERGENCE_LIMIT:
            raise DivergenceError(f"red_gap: residual {re:.3e} at t={t} exceeds {DIVERGENCE_LIMIT:g}")
        x_prev = x
        if re < cfg.eps:
            break
    return ReconstructionResult(Reflectivity(A.grid, x), trace, cfg, "red_gap", state={"v": v})


def config_dict(cfg: SolverConfig | None) -> dict:
    return {} if cfg is None else asdict(cfg)


__all__ = [
    "CGInfo", "DivergenceError", "ReconstructionResult", "SolverConfig", "SolverTrace",
    "TraceRecord", "admm_reg", "conjugate_gradient", "config_dict", "matched_filter",
    "pnp_admm", "red_admm", "red_fixed_point", "red_gap", "residual",
    "solve_x_subproblem", "stationarity_residual",
]
