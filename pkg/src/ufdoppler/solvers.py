"""Tissue / blood decompositions of a Casorati sequence.

Four methods share one result type:

* :func:`svd_filter` -- band selection on the singular spectrum,
* :func:`godec` -- bilateral random projection plus hard thresholding,
* :func:`bdrpca` -- nuclear-norm blind-deconvolved RPCA solved by a
  five-step ADMM, with a PSF re-fit every outer iteration,
* :func:`fast_bdrpca` -- the fixed-rank variant: a partial-SVD tissue
  update alternating with an ADMM LASSO blood update.

All solvers take raw data ``S`` as a :class:`~ufdoppler.core.CasoratiMatrix`
(or a cube) and return a :class:`DecompositionResult`.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import SolverConfig
from .core import CasoratiMatrix
from .exceptions import DivergenceError
from .fourier import CirculantConvolution
from .linalg import full_svd, low_rank_project, rank_estimate, svt
from .psf import PsfKernel, blind_deconv_update, homomorphic_magnitude
from .validation import check_nonneg, check_random_state, check_sequence

logger = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 10.0

# PSF refits are skipped when the tissue-free residual is numerically zero.
_ZERO_RESIDUAL = 1e-13


@dataclass
class TraceRecord:
    iteration: int
    objective: float
    delta_x: float
    seconds: float


@dataclass
class AdmmState:
    """Split variable ``z`` and multipliers ``nu`` (data) and ``w`` (split)."""

    z: np.ndarray
    w: np.ndarray
    nu: np.ndarray | None = None


@dataclass
class DecompositionResult:
    blood_x: CasoratiMatrix
    tissue_t: CasoratiMatrix
    psf: PsfKernel | None
    trace: list
    method: str
    converged: bool
    tolerance: float
    rank: int | None = None
    info: dict = field(default_factory=dict)

    @property
    def n_iter(self) -> int:
        return len(self.trace)

    @property
    def final_delta(self) -> float:
        return self.trace[-1].delta_x

    @property
    def objective(self) -> float:
        return self.trace[-1].objective

    def blurred_blood(self) -> CasoratiMatrix:
        """``H (*) X``; the blood estimate itself when no PSF was fitted."""
        if self.psf is None:
            return self.blood_x
        op = CirculantConvolution(self.psf, self.blood_x.dims.frame_shape)
        return CasoratiMatrix(op.forward(np.array(self.blood_x.data)), self.blood_x.dims)

    def write_trace(self, path) -> None:
        write_trace_csv(path, self.trace)


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "objective", "delta_x", "seconds"])
        for rec in trace:
            writer.writerow([rec.iteration, repr(rec.objective), repr(rec.delta_x), f"{rec.seconds:.6f}"])


def soft_threshold(x, kappa):
    """Complex soft-thresholding ``x * max(1 - kappa / |x|, 0)``."""
    mag = np.abs(x)
    with np.errstate(divide="ignore"):
        np.divide(kappa, mag, out=mag)
    np.subtract(1.0, mag, out=mag)
    np.maximum(mag, 0.0, out=mag)
    return x * mag


def hard_threshold(x, tau):
    return np.where(np.abs(x) > tau, x, 0)


def _frob2(A) -> float:
    return float(np.vdot(A, A).real)


def _l1(A) -> float:
    return float(np.abs(A).sum())


def _select_rank(S: CasoratiMatrix, rank):
    if rank is not None:
        return int(rank), None
    est = rank_estimate(full_svd(S.data).sigma, S.dims)
    logger.info("estimated rank r_f = %d", est.r)
    return est.r, est


def _result(method, S, X, T, psf, trace, converged, tol, rank=None, **info):
    return DecompositionResult(
        blood_x=CasoratiMatrix(X, S.dims),
        tissue_t=CasoratiMatrix(T, S.dims),
        psf=psf,
        trace=trace,
        method=method,
        converged=converged,
        tolerance=tol,
        rank=rank,
        info=info,
    )


# ---------------------------------------------------------------------------
# SVD band filter


def svd_filter(S, t_c: int, t_b: int) -> DecompositionResult:
    """Split the singular spectrum: ``1..t_c`` is tissue, ``t_c+1..t_b`` blood."""
    t0 = time.perf_counter()
    S = check_sequence(S)
    kmax = min(S.shape)
    if not (isinstance(t_c, (int, np.integer)) and isinstance(t_b, (int, np.integer))):
        raise ValueError("t_c and t_b must be integers")
    if not 0 <= t_c < t_b <= kmax:
        raise ValueError(f"need 0 <= t_c < t_b <= {kmax}, got t_c={t_c}, t_b={t_b}")
    f = full_svd(S.data)
    us = f.U * f.sigma
    Vh = f.V.conj().T
    T = us[:, :t_c] @ Vh[:t_c]
    X = us[:, t_c:t_b] @ Vh[t_c:t_b]
    trace = [TraceRecord(1, _frob2(S.data - X - T), 0.0, time.perf_counter() - t0)]
    return _result("svd", S, X, T, None, trace, True, 0.0, rank=t_c, sigma=f.sigma)


# ---------------------------------------------------------------------------
# GoDec


def _bilateral_projection(M, Y2, power):
    for _ in range(power):
        Y1 = M @ Y2
        Y2 = M.conj().T @ Y1
        Y2, _ = np.linalg.qr(Y2)
    return (M @ Y2) @ Y2.conj().T, Y2


def godec(S, r_g: int, tau_g: float, cfg: SolverConfig | None = None) -> DecompositionResult:
    """Low-rank plus sparse split by alternating projections.

    ``L`` is a rank-``r_g`` bilateral random projection of ``S - B`` with
    ``cfg.godec_power`` power steps; ``B`` keeps the entries of ``S - L``
    whose modulus exceeds ``tau_g``. The projection basis is carried across
    iterations.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    S = check_sequence(S)
    tau_g = check_nonneg(tau_g, "tau_g")
    if not isinstance(r_g, (int, np.integer)) or not 1 <= r_g <= min(S.shape):
        raise ValueError(f"r_g must be in [1, {min(S.shape)}], got {r_g!r}")
    Sd = S.data
    norm_s = np.linalg.norm(Sd)
    tol = cfg.epsilon * norm_s
    rng = check_random_state(cfg.seed)
    n = Sd.shape[1]
    Y2 = rng.standard_normal((n, r_g)) + 1j * rng.standard_normal((n, r_g))
    L = np.zeros_like(Sd)
    B = np.zeros_like(Sd)
    trace = []
    converged = False
    for k in range(1, cfg.max_outer + 1):
        L_new, Y2 = _bilateral_projection(Sd - B, Y2, max(cfg.godec_power, 1))
        B_new = hard_threshold(Sd - L_new, tau_g)
        delta = float(np.sqrt(_frob2(L_new - L) + _frob2(B_new - B)))
        L, B = L_new, B_new
        trace.append(TraceRecord(k, _frob2(Sd - L - B), delta, time.perf_counter() - t0))
        if delta <= tol:
            converged = True
            break
    return _result("godec", S, B, L, None, trace, converged, tol, rank=r_g)


# ---------------------------------------------------------------------------
# LASSO subsolver


def _lasso_admm(Y, op: CirculantConvolution, lam, rho, tol, max_iter, state=None, relax=1.6):
    """ADMM for ``min ||Y - H X||_F^2 + lam ||X||_1`` with split ``X = z``.

    Scaled form with over-relaxation ``relax``: ``w`` is the split
    multiplier divided by ``rho``. Returns the sparse iterate ``z``, the
    state for warm starts and the iteration count.
    """
    if state is None:
        state = AdmmState(z=np.zeros_like(Y), w=np.zeros_like(Y))
    z, w = state.z, state.w
    HtY2 = 2.0 * op.adjoint(Y)
    kappa = lam / rho
    stop = tol * np.linalg.norm(Y)
    it = 0
    for it in range(1, max_iter + 1):
        X = op.solve_shifted(HtY2 + rho * (z - w), 2.0, rho)
        X_hat = relax * X + (1.0 - relax) * z
        z_old = z
        z = soft_threshold(X_hat + w, kappa)
        w = w + X_hat - z
        if np.linalg.norm(X - z) <= stop and rho * np.linalg.norm(z - z_old) <= stop:
            break
    return z, AdmmState(z=z, w=w), it


def lasso_admm(
    y, h, lam: float, cfg: SolverConfig | None = None, return_info=False, state=None
) -> CasoratiMatrix:
    """Solve ``min_X ||y - h (*) X||_F^2 + lam ||X||_1`` for complex ``X``.

    Stops when primal and dual residuals are below ``cfg.lasso_tol * ||y||_F``
    or after ``cfg.max_inner`` iterations. With a delta kernel the answer is
    ``soft_threshold(y, lam / 2)``.
    """
    cfg = cfg or SolverConfig()
    lam = check_nonneg(lam, "lambda")
    y = check_sequence(y)
    op = CirculantConvolution(h, y.dims.frame_shape)
    rho = _lasso_penalty(cfg, op)
    z, st, it = _lasso_admm(np.array(y.data), op, lam, rho, cfg.lasso_tol, cfg.max_inner, state)
    out = CasoratiMatrix(z, y.dims)
    if return_info:
        return out, {"iterations": it, "state": st, "rho": rho}
    return out


def _lasso_penalty(cfg, op):
    # Scale-free: lasso_mu is relative to the largest curvature 2 |H|^2.
    return cfg.lasso_mu * 2.0 * float(op.power.max())


# ---------------------------------------------------------------------------
# PSF refit shared by both blind solvers


def _refit_psf(S, T, X, cfg, frame_shape, previous):
    resid = S - T
    if np.linalg.norm(resid) <= _ZERO_RESIDUAL * max(np.linalg.norm(S), 1e-300):
        return previous
    if not np.any(X):
        return previous
    nz, nx = frame_shape
    resid_cube = resid.reshape(nz, nx, -1, order="F")
    x_cube = X.reshape(nz, nx, -1, order="F")
    m_st = resid_cube.mean(axis=2)
    if cfg.phase_source == "frames":
        m_st, m_x = resid_cube, x_cube
    else:
        m_x = x_cube.mean(axis=2)
        if not np.any(m_x):
            return previous
    source = resid_cube if cfg.magnitude_source == "frames" else resid_cube.mean(axis=2)
    h_tilde = homomorphic_magnitude(source, cfg.smooth_sigma)
    return blind_deconv_update(m_st, m_x, h_tilde, cfg.psf_shape)


def _coerce_psf(psf):
    if psf is None or isinstance(psf, PsfKernel):
        return psf
    return PsfKernel(np.asarray(psf, dtype=np.complex128))


class _Guard:
    def __init__(self, start):
        self.start = start

    def check(self, value, trace, method):
        if self.start > 0 and value > DIVERGENCE_FACTOR * self.start:
            raise DivergenceError(
                f"{method}: objective {value:.4g} exceeded {DIVERGENCE_FACTOR:g}x its start {self.start:.4g}",
                trace,
            )


# ---------------------------------------------------------------------------
# Baseline BD-RPCA


def bdrpca(S, cfg: SolverConfig | None = None, psf=None) -> DecompositionResult:
    """Nuclear-norm blind-deconvolved RPCA.

    Outer iterations refit the PSF from temporal averages (skipped when
    ``psf`` is given), then run the ADMM for
    ``min lam ||X||_1 + rho ||T||_*`` subject to ``S = H X + T``:

    1. ``T = svt(S - H X + nu / mu, rho / mu)``
    2. ``z = soft_threshold(X + w / mu, lam / mu)``
    3. ``X`` from ``(H^H H + I) X = H^H (S - T + nu / mu) + z - w / mu``
    4. ``nu += mu (S - H X - T)``
    5. ``w += mu (X - z)``

    The initial split uses ``cfg.t_c`` (falling back to ``cfg.r_f``, then to
    the rank estimate). The returned blood is the sparse split variable ``z``.
    """
    cfg = cfg or SolverConfig()
    for name in ("lam", "rho", "mu"):
        if not getattr(cfg, name) > 0:
            raise ValueError(f"bdrpca needs {name} > 0")
    t0 = time.perf_counter()
    S = check_sequence(S)
    Sd = np.asfortranarray(S.data)
    frame_shape = S.dims.frame_shape
    tol = cfg.epsilon * np.linalg.norm(Sd)
    known = _coerce_psf(psf)
    split = cfg.t_c if cfg.t_c is not None else cfg.r_f
    r0, _ = _select_rank(S, split)

    mu, lam, rho = cfg.mu, cfg.lam, cfg.rho
    if np.any(Sd):
        T = low_rank_project(Sd, r0, random_state=cfg.seed)
    else:
        T = np.zeros_like(Sd)
    X = Sd - T
    z = X.copy()
    nu = np.zeros_like(Sd)
    w = np.zeros_like(Sd)
    kernel = known if known is not None else PsfKernel.delta()
    nuclear = float(np.sum(full_svd(T).sigma)) if np.any(T) else 0.0
    guard = _Guard(_frob2(Sd - X - T) + lam * _l1(X) + rho * nuclear)
    trace = []
    converged = False
    inner_total = 0
    for k in range(1, cfg.max_outer + 1):
        if known is None:
            kernel = _refit_psf(Sd, T, z, cfg, frame_shape, kernel)
        op = CirculantConvolution(kernel, frame_shape)
        X_prev = z
        for _ in range(cfg.max_inner):
            inner_total += 1
            HX = op.forward(X)
            T, sig = svt(Sd - HX + nu / mu, rho / mu, return_sigma=True)
            z = soft_threshold(X + w / mu, lam / mu)
            rhs = op.adjoint(Sd - T + nu / mu) + z - w / mu
            X = op.solve_shifted(rhs, 1.0, 1.0)
            HX = op.forward(X)
            r_data = Sd - HX - T
            r_split = X - z
            nu = nu + mu * r_data
            w = w + mu * r_split
            if np.linalg.norm(r_data) <= tol and np.linalg.norm(r_split) <= tol:
                break
        delta = float(np.linalg.norm(z - X_prev))
        obj = _frob2(Sd - op.forward(z) - T) + lam * _l1(z) + rho * float(sig.sum())
        trace.append(TraceRecord(k, obj, delta, time.perf_counter() - t0))
        guard.check(obj, trace, "bdrpca")
        if delta <= tol:
            converged = True
            break
    return _result(
        "bdrpca", S, z, T, kernel, trace, converged, tol, rank=r0,
        inner_iterations=inner_total, state=AdmmState(z=z, w=w, nu=nu),
    )


# ---------------------------------------------------------------------------
# Fast BD-RPCA


def fast_bdrpca(S, cfg: SolverConfig | None = None, psf=None) -> DecompositionResult:
    """Fixed-rank blind-deconvolved RPCA by alternating minimization.

    Starting from the rank-``r_f`` SVD split ``T = P(S)``, ``X = S - T``,
    each iteration

    1. averages ``S - T`` over time,
    2. refits the PSF from the averages (skipped when ``psf`` is given),
    3. sets ``T`` to the rank-``r_f`` projection of ``S - H X`` (partial SVD),
    4. solves the LASSO ``min ||S - T - H X||^2 + lam ||X||_1`` by ADMM,

    until ``||X_new - X||_F <= epsilon * ||S||_F``. ``cfg.r_f = None``
    selects the rank from the singular values of ``S``.
    """
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    S = check_sequence(S)
    Sd = np.asfortranarray(S.data)
    frame_shape = S.dims.frame_shape
    tol = cfg.epsilon * np.linalg.norm(Sd)
    known = _coerce_psf(psf)
    r_f, est = _select_rank(S, cfg.r_f)
    if not 1 <= r_f <= min(S.shape):
        raise ValueError(f"r_f must be in [1, {min(S.shape)}], got {r_f}")
    lam = cfg.lam

    if np.any(Sd):
        T = low_rank_project(Sd, r_f, random_state=cfg.seed)
    else:
        T = np.zeros_like(Sd)
    X = Sd - T
    kernel = known if known is not None else PsfKernel.delta()
    guard = _Guard(_frob2(Sd - X - T) + lam * _l1(X))
    state = None
    trace = []
    converged = False
    inner_total = 0
    svd_methods = []
    for k in range(1, cfg.max_outer + 1):
        if known is None:
            kernel = _refit_psf(Sd, T, X, cfg, frame_shape, kernel)
        op = CirculantConvolution(kernel, frame_shape)
        resid = Sd - op.forward(X)
        if np.any(resid):
            T, factors = low_rank_project(resid, r_f, random_state=cfg.seed, return_factors=True)
            T = np.asfortranarray(T)
            svd_methods.append(factors.method)
        else:
            T = np.zeros_like(Sd)
        X_new, state, it = _lasso_admm(
            Sd - T, op, lam, _lasso_penalty(cfg, op), cfg.lasso_tol, cfg.max_inner, state
        )
        inner_total += it
        delta = float(np.linalg.norm(X_new - X))
        X = X_new
        obj = _frob2(Sd - op.forward(X) - T) + lam * _l1(X)
        trace.append(TraceRecord(k, obj, delta, time.perf_counter() - t0))
        logger.debug("fast-bdrpca %d: delta %.3e tol %.3e inner %d obj %.6e", k, delta, tol, it, obj)
        guard.check(obj, trace, "fast-bdrpca")
        if delta <= tol:
            converged = True
            break
    return _result(
        "fast-bdrpca", S, X, T, kernel, trace, converged, tol, rank=r_f,
        rank_estimate=est, inner_iterations=inner_total, svd_methods=svd_methods,
    )


METHODS = ("svd", "godec", "bdrpca", "fast-bdrpca")


def run_method(method: str, S, cfg: SolverConfig, psf=None) -> DecompositionResult:
    """Dispatch by CLI method name."""
    if method == "svd":
        S = check_sequence(S)
        t_c = cfg.t_c if cfg.t_c is not None else (cfg.r_f or _select_rank(S, None)[0])
        t_b = cfg.t_b if cfg.t_b is not None else min(S.shape)
        return svd_filter(S, t_c, t_b)
    if method == "godec":
        S = check_sequence(S)
        r_g = cfg.r_g if cfg.r_g is not None else (cfg.r_f or _select_rank(S, None)[0])
        return godec(S, r_g, cfg.tau_g, cfg)
    if method == "bdrpca":
        return bdrpca(S, cfg, psf=psf)
    if method == "fast-bdrpca":
        return fast_bdrpca(S, cfg, psf=psf)
    raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
