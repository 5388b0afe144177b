"""Regularized inversion of the multi-species forward model.

All solvers work on the transverse-DFT densities ``P[s, q, n]`` and data
``S[f, q, m]``. The objective is

    F(P) = 1/2 sum_q ||S^q - Phi^q P^q||^2 + lam * R(P)

with ``R`` one of

* ``tikhonov``  ``1/2 sum_s ||P_s||^2`` (DFT domain), so the minimizer solves
  ``(Phi^H Phi + lam I) P = Phi^H S`` block by block;
* ``l1``        ``sum_s ||p_s||_1`` on the spatial densities ``p = ifft(P)``;
* ``group-l21`` ``sum_s ||p_s||_2`` on the spatial densities.

``lam`` is ``lambda_r`` times a reference scale (``lambda_scale="relative"``,
the default) or ``lambda_r`` itself (``"absolute"``). The reference scale is
``||Phi||^2`` for Tikhonov and, for the sparse penalties, the smallest weight
at which the zero density is optimal (``||(Phi F^-1)^H S||_inf`` for l1, the
largest species-block 2-norm for the group penalty). Relative weights are
comparable across geometries, spectra and data amplitudes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalFailure
from .forward import ForwardOperator
from .kernel import KernelTable

__all__ = [
    "ReconConfig",
    "ReconResult",
    "objective",
    "effective_lambda",
    "lambda_max",
    "soft_threshold",
    "group_soft_threshold",
    "solve_tikhonov",
    "solve_fista",
    "solve",
    "project_passband",
    "write_trace_csv",
]

TIKHONOV = "tikhonov"
L1 = "l1"
GROUP = "group-l21"
REGULARIZERS = (TIKHONOV, L1, GROUP)


@dataclass(frozen=True)
class ReconConfig:
    """Solver settings. Defaults follow the Tikhonov operating point."""

    regularizer: str = TIKHONOV
    lambda_r: float = 1e-5
    max_iters: int = 300
    cg_tol: float = 1e-10
    lambda_scale: str = "relative"
    power_iters: int = 30
    restart: bool = True
    seed: int = 0
    workers: int | None = None

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"regularizer must be one of {REGULARIZERS}")
        if not (self.lambda_r > 0 and math.isfinite(self.lambda_r)):
            raise ValueError("lambda_r must be positive and finite")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.cg_tol >= 0:
            raise ValueError("cg_tol must be >= 0")
        if self.lambda_scale not in ("relative", "absolute"):
            raise ValueError("lambda_scale must be 'relative' or 'absolute'")
        if self.power_iters < 30:
            raise ValueError("power_iters must be at least 30")

    @classmethod
    def l1_default(cls, **kw) -> "ReconConfig":
        """The sparse operating point: l1, ``lambda_r = 1e-3``, 2000 iterations."""
        base = dict(regularizer=L1, lambda_r=1e-3, max_iters=2000)
        base.update(kw)
        return cls(**base)


@dataclass
class ReconResult:
    """Recovered densities with per-iteration traces."""

    P: np.ndarray = field(repr=False)
    objective_trace: np.ndarray = field(repr=False)
    residual_trace: np.ndarray = field(repr=False)
    residual_norm: float
    iterations_run: int
    lam: float

    @property
    def spatial(self) -> np.ndarray:
        """Spatial densities ``p[s, x, n]``."""
        return np.fft.ifft(self.P, axis=1)


def _op(H, table, config, op):
    return op if op is not None else ForwardOperator(H, table, config.workers)


def _block_norm_sq(op: ForwardOperator, config: ReconConfig) -> float:
    # power iteration underestimates; a small margin keeps 1/L a valid step
    return 1.01 * op.norm_estimate(config.power_iters, config.seed) ** 2


def lambda_max(S, op: ForwardOperator, regularizer: str) -> float:
    """Smallest sparse-penalty weight for which ``P = 0`` is a minimizer."""
    Nx = op.table.shape[1]
    # gradient with respect to the spatial densities: F^H = Nx * ifft
    g = Nx * np.fft.ifft(op.adjoint(np.asarray(S)), axis=1)
    if regularizer == L1:
        return float(np.abs(g).max())
    if regularizer == GROUP:
        return float(np.sqrt((np.abs(g) ** 2).sum(axis=(1, 2))).max())
    raise ValueError("lambda_max is defined for the sparse penalties only")


def effective_lambda(op: ForwardOperator, config: ReconConfig, S=None,
                     L: float | None = None) -> float:
    """Absolute penalty weight used by the solvers for ``config``."""
    if config.lambda_scale == "absolute":
        return float(config.lambda_r)
    if config.regularizer == TIKHONOV:
        L = _block_norm_sq(op, config) if L is None else L
        return float(config.lambda_r * L)
    if S is None:
        raise ValueError("relative sparse weights need the data S")
    return float(config.lambda_r * lambda_max(S, op, config.regularizer))


def _penalty(P, regularizer: str) -> float:
    if regularizer == TIKHONOV:
        return 0.5 * float(np.vdot(P, P).real)
    p = np.fft.ifft(P, axis=1)
    if regularizer == L1:
        return float(np.abs(p).sum())
    return float(np.sqrt((np.abs(p) ** 2).sum(axis=(1, 2))).sum())


def objective(P, S, H, table: KernelTable, config: ReconConfig,
              op: ForwardOperator | None = None, lam: float | None = None) -> float:
    """Value of the regularized least-squares objective at ``P``."""
    op = _op(H, table, config, op)
    P = np.asarray(P)
    S = np.asarray(S)
    if P.shape != op.density_shape or S.shape != op.data_shape:
        raise ValueError("P or S shape does not match the operator")
    lam = effective_lambda(op, config, S) if lam is None else lam
    r = S - op.forward(P)
    return 0.5 * float(np.vdot(r, r).real) + lam * _penalty(P, config.regularizer)


def soft_threshold(v, tau: float) -> np.ndarray:
    """Complex soft threshold: shrink magnitudes by ``tau``, keep phases."""
    v = np.asarray(v)
    mag = np.abs(v)
    keep = mag > tau
    scale = np.where(keep, 1.0 - tau / np.where(keep, mag, 1.0), 0.0)
    return v * scale


def group_soft_threshold(v, tau: float, axes=(1, 2)) -> np.ndarray:
    """Block soft threshold of each species block (norm over ``axes``)."""
    v = np.asarray(v)
    nrm = np.sqrt((np.abs(v) ** 2).sum(axis=axes, keepdims=True))
    keep = nrm > tau
    scale = np.where(keep, 1.0 - tau / np.where(keep, nrm, 1.0), 0.0)
    return v * scale


def _finite(x, what: str):
    if not np.all(np.isfinite(x)):
        raise NumericalFailure(f"non-finite values in {what}")


def solve_tikhonov(S, H, table: KernelTable, config: ReconConfig,
                   op: ForwardOperator | None = None, x0=None) -> ReconResult:
    """Conjugate gradients on ``(Phi^H Phi + lam I) P = Phi^H S`` for all ``q``.

    Blocks are independent; each runs its own CG recursion and stops once its
    relative residual drops below ``cg_tol``. The traces hold the objective
    and the overall relative residual ``||grad|| / ||Phi^H S||`` after each
    iteration.
    """
    if config.regularizer != TIKHONOV:
        raise ValueError("solve_tikhonov needs regularizer='tikhonov'")
    op = _op(H, table, config, op)
    S = np.asarray(S, dtype=complex)
    if S.shape != op.data_shape:
        raise ValueError(f"S has shape {S.shape}, expected {op.data_shape}")
    _finite(S, "data")
    lam = effective_lambda(op, config)

    def normal(x):
        return op.adjoint(op.forward(x)) + lam * x

    def qdot(a, b):  # per-q inner products -> shape (Nx,)
        return np.einsum("sqn,sqn->q", a.conj(), b).real

    b = op.adjoint(S)
    bnorm = np.sqrt(qdot(b, b))
    x = np.zeros(op.density_shape, complex) if x0 is None else np.array(x0, dtype=complex)
    r = b - normal(x) if x0 is not None else b.copy()
    p = r.copy()
    rr = qdot(r, r)
    safe = np.where(bnorm > 0, bnorm, 1.0)
    active = (np.sqrt(rr) > config.cg_tol * safe) & (bnorm > 0)
    total_b = float(np.linalg.norm(bnorm)) or 1.0
    obj, res = [], []
    it = 0
    while it < config.max_iters and np.any(active):
        Ap = normal(p)
        pAp = qdot(p, Ap)
        alpha = np.where(active & (pAp > 0), rr / np.where(pAp > 0, pAp, 1.0), 0.0)
        x += alpha[None, :, None] * p
        r -= alpha[None, :, None] * Ap
        rr_new = qdot(r, r)
        beta = np.where(active, rr_new / np.where(rr > 0, rr, 1.0), 0.0)
        p = r + beta[None, :, None] * p
        rr = rr_new
        active &= np.sqrt(rr) > config.cg_tol * safe
        it += 1
        _finite(x, "CG iterate")
        obj.append(objective(x, S, H, table, config, op, lam))
        res.append(float(np.sqrt(rr.sum())) / total_b)
    resid = S - op.forward(x)
    return ReconResult(x, np.array(obj), np.array(res), float(np.linalg.norm(resid)), it, lam)


def _prox(V, t: float, lam: float, regularizer: str) -> np.ndarray:
    """Proximal map of ``t*lam*R`` in the DFT variable.

    The DFT scales norms by ``sqrt(Nx)``, so thresholds on the spatial
    densities are ``t*lam/Nx``.
    """
    Nx = V.shape[1]
    v = np.fft.ifft(V, axis=1)
    tau = t * lam / Nx
    if regularizer == L1:
        v = soft_threshold(v, tau)
    else:
        v = group_soft_threshold(v, tau)
    return np.fft.fft(v, axis=1)


def solve_fista(S, H, table: KernelTable, config: ReconConfig,
                op: ForwardOperator | None = None, x0=None) -> ReconResult:
    """Accelerated proximal gradient with function-value restart.

    Step ``1/L`` with ``L`` from ``power_iters`` power iterations. When an
    accelerated step raises the objective the momentum is discarded and a
    plain proximal-gradient step is taken from the previous iterate instead,
    so the objective trace is non-increasing.
    """
    if config.regularizer not in (L1, GROUP):
        raise ValueError("solve_fista needs regularizer 'l1' or 'group-l21'")
    op = _op(H, table, config, op)
    S = np.asarray(S, dtype=complex)
    if S.shape != op.data_shape:
        raise ValueError(f"S has shape {S.shape}, expected {op.data_shape}")
    _finite(S, "data")
    L = _block_norm_sq(op, config)
    if L == 0:
        P = np.zeros(op.density_shape, complex)
        f0 = 0.5 * float(np.vdot(S, S).real)
        return ReconResult(P, np.array([f0]), np.array([1.0]), math.sqrt(2 * f0), 1, 0.0)
    lam = effective_lambda(op, config, S, L)
    step = 1.0 / L
    reg = config.regularizer
    snorm = float(np.linalg.norm(S)) or 1.0

    def value(x, Ax):
        r = S - Ax
        return 0.5 * float(np.vdot(r, r).real) + lam * _penalty(x, reg)

    x = np.zeros(op.density_shape, complex) if x0 is None else np.array(x0, dtype=complex)
    Ax = op.forward(x)
    F = value(x, Ax)
    y, Ay, t = x, Ax, 1.0
    obj, res = [], []
    for _ in range(config.max_iters):
        grad = op.adjoint(Ay - S)
        x_new = _prox(y - step * grad, step, lam, reg)
        Ax_new = op.forward(x_new)
        F_new = value(x_new, Ax_new)
        if config.restart and F_new > F and t > 1.0:
            grad = op.adjoint(Ax - S)
            x_new = _prox(x - step * grad, step, lam, reg)
            Ax_new = op.forward(x_new)
            F_new = value(x_new, Ax_new)
            t = 1.0
        _finite(x_new, "FISTA iterate")
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        mom = (t - 1.0) / t_new
        y = x_new + mom * (x_new - x)
        Ay = Ax_new + mom * (Ax_new - Ax)
        x, Ax, F, t = x_new, Ax_new, F_new, t_new
        obj.append(F)
        res.append(float(np.linalg.norm(S - Ax)) / snorm)
    return ReconResult(x, np.array(obj), np.array(res), float(np.linalg.norm(S - Ax)),
                       config.max_iters, lam)


def solve(S, H, table: KernelTable, config: ReconConfig,
          op: ForwardOperator | None = None) -> ReconResult:
    """Dispatch to :func:`solve_tikhonov` or :func:`solve_fista`."""
    if config.regularizer == TIKHONOV:
        return solve_tikhonov(S, H, table, config, op)
    return solve_fista(S, H, table, config, op)


def project_passband(P, bases) -> np.ndarray:
    """Apply ``V^q V^q^H`` to every species block ``P[s, q, :]``.

    ``bases`` is a sequence of :class:`~spectomo.uniqueness.PassbandBasis`
    (one per ``q``).
    """
    P = np.asarray(P, dtype=complex)
    if P.ndim != 3:
        raise ValueError("P must be [s, q, n]")
    if len(bases) != P.shape[1]:
        raise ValueError(f"{len(bases)} bases for {P.shape[1]} blocks")
    out = np.empty_like(P)
    for q, b in enumerate(bases):
        V = b.V
        if V.shape[0] != P.shape[2]:
            raise ValueError(f"basis for q={q} has {V.shape[0]} rows, densities have {P.shape[2]}")
        out[:, q] = (P[:, q] @ V.conj()) @ V.T
    return out


def write_trace_csv(result: ReconResult, path) -> None:
    """Iteration trace as ``iteration,objective,residual``."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective", "residual"])
        for i, (o, r) in enumerate(zip(result.objective_trace, result.residual_trace), 1):
            w.writerow([i, repr(float(o)), repr(float(r))])
