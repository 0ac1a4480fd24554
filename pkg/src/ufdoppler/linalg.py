"""Complex SVD machinery: full and partial SVD, thresholding, rank selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import SequenceDims
from .validation import check_complex_matrix, check_nonneg, check_random_state, check_rank

_EPS = np.finfo(np.float64).eps


@dataclass
class SvdFactors:
    """Thin SVD ``A ~= U @ diag(sigma) @ V.conj().T``.

    ``method`` is ``"full"``, ``"lanczos"`` or ``"full-fallback"`` (Lanczos
    hit its step cap and the result came from a truncated full SVD).
    """

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray
    method: str = "full"
    n_steps: int = 0

    @property
    def rank(self) -> int:
        return self.sigma.shape[0]

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.V.conj().T


@dataclass
class RankEstimate:
    r: int
    scores: np.ndarray
    zeta: float
    indices: np.ndarray = field(repr=False, default=None)


def full_svd(A) -> SvdFactors:
    A = check_complex_matrix(A)
    U, s, Vh = np.linalg.svd(A, full_matrices=False)
    return SvdFactors(U, s, Vh.conj().T, method="full")


def _random_unit(rng, n, dtype):
    v = rng.standard_normal(n)
    if np.iscomplexobj(np.empty(0, dtype)):
        v = v + 1j * rng.standard_normal(n)
    return (v / np.linalg.norm(v)).astype(dtype)


def _orthogonalize(p, Q):
    """Classical Gram-Schmidt against the columns of ``Q``.

    One pass always; a second pass when the estimated loss of
    orthogonality after the first exceeds sqrt(eps).
    """
    if Q.shape[1] == 0:
        return p
    before = np.linalg.norm(p)
    p = p - Q @ (Q.conj().T @ p)
    after = np.linalg.norm(p)
    if after == 0.0 or _EPS * before / after * np.sqrt(Q.shape[1]) > np.sqrt(_EPS):
        p = p - Q @ (Q.conj().T @ p)
    return p


def _restart_vector(rng, Q, dtype):
    # Krylov breakdown: continue with a fresh direction orthogonal to Q.
    for _ in range(3):
        v = _orthogonalize(_random_unit(rng, Q.shape[0], dtype), Q)
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            return v / nv
    return None


def partial_svd(A, r: int, random_state=0, tol: float = 1e-12, max_steps=None) -> SvdFactors:
    """Leading ``r`` singular triplets by Golub-Kahan-Lanczos bidiagonalization.

    Parameters
    ----------
    A : array_like, shape (m, n)
    r : int
        Number of triplets, ``1 <= r <= min(m, n)``.
    random_state : int or Generator
        Seeds the unit start vector.
    tol : float
        A Ritz triplet is accepted when its residual bound is below
        ``tol * sigma_1``.
    max_steps : int, optional
        Lanczos step cap, default ``10 * r + 50`` (clipped to ``min(m, n)``).
        If the cap is reached without convergence, the result is the
        truncation of a full SVD and ``method == "full-fallback"``.
    """
    A = check_complex_matrix(A)
    m, n = A.shape
    r = check_rank(r, A.shape)
    kfull = min(m, n)
    kmax = min(kfull, 10 * r + 50 if max_steps is None else int(max_steps))
    kmax = max(kmax, r)
    if not np.any(A):
        f = full_svd(A)
        return SvdFactors(f.U[:, :r], f.sigma[:r], f.V[:, :r], method="full")

    rng = check_random_state(random_state)
    dtype = A.dtype
    U = np.zeros((m, kmax), dtype=dtype)
    V = np.zeros((n, kmax + 1), dtype=dtype)
    alpha = np.zeros(kmax)
    beta = np.zeros(kmax)
    AH = A.conj().T

    V[:, 0] = _random_unit(rng, n, dtype)
    q = A @ V[:, 0]
    kmin = min(kmax, 2 * r + 5)
    k = 0
    result = None
    for j in range(kmax):
        a = np.linalg.norm(q)
        if a <= _EPS * 10:
            u = _restart_vector(rng, U[:, :j], dtype)
            if u is None:
                break
            a = 0.0
        else:
            u = q / a
        alpha[j] = a
        U[:, j] = u

        p = _orthogonalize(AH @ u - a * V[:, j], V[:, : j + 1])
        b = np.linalg.norm(p)
        k = j + 1
        if k == kfull:
            beta[j] = 0.0
        elif b <= _EPS * 10:
            vn = _restart_vector(rng, V[:, : j + 1], dtype)
            beta[j] = 0.0
            if vn is None:
                break
            V[:, j + 1] = vn
        else:
            beta[j] = b
            V[:, j + 1] = p / b

        if k >= kmin or k == kmax:
            B = np.diag(alpha[:k]) + np.diag(beta[: k - 1], 1)
            P, s, Qh = np.linalg.svd(B)
            bound = beta[k - 1] * np.abs(P[k - 1, :r])
            if k >= r and (k == kfull or np.all(bound <= tol * max(s[0], _EPS))):
                result = (P, s, Qh)
                break
        if k == kmax:
            break
        q = _orthogonalize(A @ V[:, j + 1] - beta[j] * U[:, j], U[:, : j + 1])

    if result is None:
        f = full_svd(A)
        return SvdFactors(f.U[:, :r], f.sigma[:r], f.V[:, :r], method="full-fallback", n_steps=k)
    P, s, Qh = result
    Ur = U[:, :k] @ P[:, :r]
    Vr = V[:, :k] @ Qh.conj().T[:, :r]
    return SvdFactors(Ur, s[:r].copy(), Vr, method="lanczos", n_steps=k)


def shrink_singular_values(sigma, tau):
    return np.maximum(sigma - tau, 0.0)


def svt(A, tau: float, return_sigma=False):
    """Singular value thresholding ``U diag(max(sigma - tau, 0)) V^H``.

    This is the minimizer of ``tau * ||T||_* + 0.5 * ||T - A||_F^2``.
    With ``return_sigma`` the thresholded singular values are also returned.
    """
    tau = check_nonneg(tau, "tau")
    f = full_svd(A)
    s = shrink_singular_values(f.sigma, tau)
    keep = s > 0
    out = (f.U[:, keep] * s[keep]) @ f.V[:, keep].conj().T
    if return_sigma:
        return out, s
    return out


def low_rank_project(A, r: int, random_state=0, method="partial", return_factors=False):
    """Best rank-``r`` Frobenius approximation of ``A``."""
    A = check_complex_matrix(A)
    r = check_rank(r, A.shape)
    if method == "partial":
        f = partial_svd(A, r, random_state=random_state)
    elif method == "full":
        g = full_svd(A)
        f = SvdFactors(g.U[:, :r], g.sigma[:r], g.V[:, :r], method="full")
    else:
        raise ValueError(f"unknown method {method!r}")
    P = f.reconstruct()
    return (P, f) if return_factors else P


def rank_estimate(sigma, dims, n_observed=None, max_rank=None) -> RankEstimate:
    """Pick the rank minimizing ``(s[i+1] + s[1] * sqrt(i / zeta)) / s[i]``.

    Indices are 1-based as in the usual statement of the estimator. ``zeta``
    is ``n_observed / sqrt(n_z * n_x * n_t)``; with fully observed data
    (the default) that is ``sqrt(n_z * n_x * n_t)``.

    Indices whose singular value is at most ``1e-14 * s[1]`` are skipped.
    Ties go to the smaller rank.
    """
    s = np.asarray(sigma, dtype=np.float64)
    if s.ndim != 1 or s.size < 2:
        raise ValueError("need at least two singular values")
    if np.any(s < 0) or np.any(np.diff(s) > 1e-12 * max(s[0], 0)):
        raise ValueError("singular values must be nonnegative and nonincreasing")
    if s[0] <= 0:
        raise ValueError("all-zero singular values: rank is undefined")
    if not isinstance(dims, SequenceDims):
        dims = SequenceDims(*dims)
    total = dims.size
    n_obs = total if n_observed is None else n_observed
    zeta = n_obs / np.sqrt(total)

    admissible = np.nonzero(s > 1e-14 * s[0])[0] + 1
    i_max = min(int(admissible.max()), s.size - 1)
    if max_rank is not None:
        i_max = min(i_max, int(max_rank))
    i = np.arange(1, i_max + 1)
    scores = (s[i] + s[0] * np.sqrt(i / zeta)) / s[i - 1]
    r = int(i[np.argmin(scores)])
    return RankEstimate(r=r, scores=scores, zeta=float(zeta), indices=i)
