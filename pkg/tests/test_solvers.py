import numpy as np
import pytest

from ufdoppler.config import SolverConfig
from ufdoppler.core import CasoratiMatrix
from ufdoppler.exceptions import DivergenceError
from ufdoppler.fourier import CirculantConvolution
from ufdoppler.linalg import full_svd
from ufdoppler.metrics import support_scores
from ufdoppler.psf import PsfKernel, gaussian_kernel
from ufdoppler.solvers import (
    METHODS,
    DecompositionResult,
    TraceRecord,
    _Guard,
    bdrpca,
    fast_bdrpca,
    godec,
    hard_threshold,
    lasso_admm,
    run_method,
    soft_threshold,
    svd_filter,
)

from conftest import crandn

# Objective of the 6x6x1 LASSO below, from an independent FISTA run
# (200000 iterations on an explicit circulant matrix).
LASSO_ORACLE_OBJECTIVE = 13.532657565294823


def _seq(A, dims):
    return CasoratiMatrix(A, dims)


def _low_rank(rng, m, n, r):
    return crandn(rng, m, r) @ crandn(rng, r, n)


# --- thresholding -----------------------------------------------------------


def test_soft_threshold_complex():
    x = np.array([3 + 4j, 0.1j, 0.0, -2.0])
    out = soft_threshold(x.copy(), 1.0)
    np.testing.assert_allclose(out, [(3 + 4j) * 0.8, 0, 0, -1.0])
    assert np.angle(out[0]) == pytest.approx(np.angle(x[0]))


def test_hard_threshold():
    x = np.array([3.0, -0.5, 1.0, 1.5j])
    np.testing.assert_array_equal(hard_threshold(x, 1.0), [3.0, 0, 0, 1.5j])


# --- SVD filter -------------------------------------------------------------


def test_svd_filter_full_band(rng):
    S = _seq(crandn(rng, 12, 8), (3, 4, 8))
    r = svd_filter(S, 0, 8)
    np.testing.assert_allclose(r.blood_x.data, S.data, atol=1e-12)
    assert np.abs(r.tissue_t.data).max() == 0
    assert r.psf is None


def test_svd_filter_last_component(rng):
    A = crandn(rng, 12, 8)
    f = full_svd(A)
    r = svd_filter(_seq(A, (3, 4, 8)), 7, 8)
    last = f.sigma[7] * np.outer(f.U[:, 7], f.V[:, 7].conj())
    np.testing.assert_allclose(r.blood_x.data, last, atol=1e-12)


def test_svd_filter_band_oracle(rng):
    A = _low_rank(rng, 20, 15, 6)
    f = full_svd(A)
    band = sum(f.sigma[i] * np.outer(f.U[:, i], f.V[:, i].conj()) for i in (2, 3))
    r = svd_filter(_seq(A, (4, 5, 15)), 2, 4)
    assert np.linalg.norm(r.blood_x.data - band) <= 1e-9 * np.linalg.norm(band)


def test_svd_filter_rejects_bad_thresholds(rng):
    S = _seq(crandn(rng, 6, 4), (2, 3, 4))
    for t_c, t_b in [(2, 2), (3, 2), (-1, 2), (0, 5)]:
        with pytest.raises(ValueError):
            svd_filter(S, t_c, t_b)


# --- GoDec ------------------------------------------------------------------


def test_godec_pure_low_rank(rng):
    A = _low_rank(rng, 40, 30, 3)
    r = godec(_seq(A, (8, 5, 30)), 3, 0.5)
    assert np.abs(r.blood_x.data).max() == 0
    assert np.linalg.norm(r.tissue_t.data - A) <= 1e-6 * np.linalg.norm(A)
    assert r.converged


def test_godec_sparse_on_empty_background(rng):
    S = np.zeros((50, 40), complex)
    idx = rng.choice(S.size, 30, replace=False)
    S.flat[idx] = rng.uniform(5, 15, 30) * np.exp(2j * np.pi * rng.random(30))
    r = godec(_seq(S, (10, 5, 40)), 1, 1.0)
    truth = S != 0
    found = r.blood_x.data != 0
    # every spike is found; the rank-1 part may leak a few extra entries
    assert np.all(found[truth])
    assert np.linalg.norm(S - r.blood_x.data - r.tissue_t.data) <= 1e-6 * np.linalg.norm(S) + 1.0


def test_godec_zero_threshold_keeps_residual(rng):
    A = crandn(rng, 20, 10)
    r = godec(_seq(A, (4, 5, 10)), 2, 0.0)
    np.testing.assert_allclose(r.blood_x.data, A - r.tissue_t.data, atol=1e-12)


def test_godec_argument_checks(rng):
    S = _seq(crandn(rng, 6, 4), (2, 3, 4))
    with pytest.raises(ValueError):
        godec(S, 0, 1.0)
    with pytest.raises(ValueError):
        godec(S, 2, -1.0)


def test_godec_seeded(rng):
    S = _seq(_low_rank(rng, 30, 20, 4) + 0.1 * crandn(rng, 30, 20), (5, 6, 20))
    a = godec(S, 3, 0.2, SolverConfig(seed=9))
    b = godec(S, 3, 0.2, SolverConfig(seed=9))
    assert a.blood_x.data.tobytes() == b.blood_x.data.tobytes()


# --- LASSO ------------------------------------------------------------------


def test_lasso_delta_is_soft_threshold(rng):
    y = _seq(crandn(rng, 30, 5), (5, 6, 5))
    lam = 0.6
    x = lasso_admm(y, PsfKernel.delta((3, 3)), lam)
    ref = soft_threshold(np.array(y.data), lam / 2)
    assert np.linalg.norm(x.data - ref) <= 1e-6 * np.linalg.norm(ref)


def test_lasso_zero_lambda_delta(rng):
    y = _seq(crandn(rng, 16, 3), (4, 4, 3))
    x = lasso_admm(y, PsfKernel.delta(), 0.0)
    assert np.linalg.norm(x.data - y.data) <= 1e-6 * np.linalg.norm(y.data)


def test_lasso_matches_oracle_objective():
    rng = np.random.default_rng(2024)
    y = rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
    h = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    lam = 0.8
    Y = _seq(y.reshape(-1, 1, order="F"), (6, 6, 1))
    cfg = SolverConfig(max_inner=20000, lasso_tol=1e-10)
    x = lasso_admm(Y, h, lam, cfg)
    op = CirculantConvolution(h, (6, 6))
    obj = np.linalg.norm(Y.data - op.forward(np.array(x.data))) ** 2 + lam * np.abs(x.data).sum()
    assert obj == pytest.approx(LASSO_ORACLE_OBJECTIVE, rel=1e-4)


def test_lasso_rejects_negative_lambda(rng):
    with pytest.raises(ValueError):
        lasso_admm(_seq(crandn(rng, 4, 2), (2, 2, 2)), PsfKernel.delta(), -1.0)


def test_lasso_info_and_warm_start(rng):
    y = _seq(crandn(rng, 36, 4), (6, 6, 4))
    h = gaussian_kernel((3, 3), 1.0, 1.0)
    x, info = lasso_admm(y, h, 0.5, return_info=True)
    assert info["iterations"] >= 1
    _, info2 = lasso_admm(y, h, 0.5, return_info=True, state=info["state"])
    assert info2["iterations"] <= info["iterations"]


# --- BD-RPCA ----------------------------------------------------------------


def test_bdrpca_zero_input():
    S = _seq(np.zeros((16, 5), complex), (4, 4, 5))
    r = bdrpca(S, SolverConfig(t_c=1))
    assert r.n_iter == 1 and r.converged
    assert not np.any(r.blood_x.data) and not np.any(r.tissue_t.data)


def test_bdrpca_rank_one_large_lambda(rng):
    A = np.outer(crandn(rng, 36), crandn(rng, 10))
    r = bdrpca(_seq(A, (6, 6, 10)), SolverConfig(lam=1e3, rho=0.1, mu=1.0, t_c=1))
    assert np.linalg.norm(r.blood_x.data) <= 1e-6 * np.linalg.norm(A)
    assert np.linalg.norm(r.tissue_t.data - A) <= 1e-2 * np.linalg.norm(A)


def test_bdrpca_requires_positive_weights(rng):
    S = _seq(crandn(rng, 16, 4), (4, 4, 4))
    with pytest.raises(ValueError):
        bdrpca(S, SolverConfig(lam=0.0))


def test_bdrpca_phantom_support(small_phantom):
    S, truth = small_phantom
    cfg = SolverConfig(lam=1.0, rho=5.0, mu=1.0, t_c=truth.r_true, max_outer=6, max_inner=40)
    r = bdrpca(S, cfg, psf=truth.psf)
    f1 = support_scores(r.blood_x.data, truth.blood_support())[2]
    assert f1 >= 0.9
    assert r.blood_x.dims == S.dims and r.tissue_t.dims == S.dims


# --- fast BD-RPCA -----------------------------------------------------------


def test_fast_low_rank_no_blood(rng):
    A = _low_rank(rng, 64, 20, 2)
    r = fast_bdrpca(_seq(A, (8, 8, 20)), SolverConfig(r_f=3))
    assert np.linalg.norm(r.tissue_t.data - A) <= 1e-6 * np.linalg.norm(A)
    assert np.linalg.norm(r.blood_x.data) <= 1e-6 * np.linalg.norm(A)
    assert r.converged and r.n_iter <= 2


def test_fast_tissue_step_is_eckart_young(small_phantom, rng):
    S, truth = small_phantom
    cfg = SolverConfig(r_f=truth.r_true, max_outer=1)
    r = fast_bdrpca(S, cfg, psf=truth.psf)
    # T must be the best rank-r_f fit of S - H X^0 where X^0 = S - P(S)
    from ufdoppler.linalg import low_rank_project

    T0 = low_rank_project(np.array(S.data), truth.r_true)
    op = CirculantConvolution(truth.psf, S.dims.frame_shape)
    R = S.data - op.forward(S.data - T0)
    base = np.linalg.norm(R - r.tissue_t.data)
    f = full_svd(r.tissue_t.data)
    k = truth.r_true
    for _ in range(20):
        U = f.U[:, :k] + 0.01 * crandn(rng, f.U.shape[0], k)
        V = f.V[:, :k] + 0.01 * crandn(rng, f.V.shape[0], k)
        assert base <= np.linalg.norm(R - (U * f.sigma[:k]) @ V.conj().T) + 1e-9


def test_fast_phantom_known_psf(small_phantom):
    S, truth = small_phantom
    r = fast_bdrpca(S, SolverConfig(lam=0.3), psf=truth.psf)
    assert r.rank == truth.r_true
    assert r.converged and r.final_delta <= r.tolerance
    t_err = np.linalg.norm(r.tissue_t.data - truth.tissue.data) / np.linalg.norm(truth.tissue.data)
    assert t_err <= 0.05
    assert support_scores(r.blood_x.data, truth.blood_support())[2] >= 0.9


def test_fast_deterministic_trace(small_phantom):
    S, _ = small_phantom
    cfg = SolverConfig(lam=0.3, max_outer=3, max_inner=30)
    a = fast_bdrpca(S, cfg)
    b = fast_bdrpca(S, cfg)
    assert [(t.objective, t.delta_x) for t in a.trace] == [(t.objective, t.delta_x) for t in b.trace]
    assert a.blood_x.data.tobytes() == b.blood_x.data.tobytes()
    assert a.psf.kernel.tobytes() == b.psf.kernel.tobytes()


def test_fast_rank_bounds(rng):
    S = _seq(crandn(rng, 16, 4), (4, 4, 4))
    with pytest.raises(ValueError):
        fast_bdrpca(S, SolverConfig(r_f=5))


def test_cap_is_flagged(small_phantom):
    S, _ = small_phantom
    r = fast_bdrpca(S, SolverConfig(lam=0.3, max_outer=1, max_inner=5))
    assert r.n_iter == 1 and not r.converged and r.final_delta > r.tolerance


# --- shared plumbing ----------------------------------------------------------


def test_divergence_guard():
    g = _Guard(1.0)
    g.check(9.9, [], "x")
    with pytest.raises(DivergenceError) as err:
        g.check(10.5, ["trace"], "x")
    assert err.value.trace == ["trace"]


def test_run_method_dispatch(small_phantom):
    S, truth = small_phantom
    cfg = SolverConfig(lam=0.3, max_outer=2, max_inner=10, t_c=3, t_b=10, r_g=3, tau_g=0.002)
    for method in METHODS:
        r = run_method(method, S, cfg)
        assert isinstance(r, DecompositionResult) and r.method == method
        assert r.blood_x.dims == S.dims and r.tissue_t.dims == S.dims
        assert len(r.trace) >= 1
    with pytest.raises(ValueError):
        run_method("pca", S, cfg)


def test_trace_csv(tmp_path):
    r = DecompositionResult(None, None, None, [TraceRecord(1, 2.5, 0.1, 0.01)], "x", True, 0.0)
    r.write_trace(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "iteration,objective,delta_x,seconds"
    assert lines[1].startswith("1,2.5,0.1,")


def test_stopping_contract(small_phantom):
    S, _ = small_phantom
    for method in ("godec", "fast-bdrpca"):
        r = run_method(method, S, SolverConfig(lam=0.3, r_g=3, tau_g=0.002))
        if r.converged:
            assert r.final_delta <= SolverConfig().epsilon * np.linalg.norm(S.data)
