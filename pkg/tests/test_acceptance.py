"""End-to-end acceptance checks at their stated tolerances.

Every test prints one ``ACCEPTANCE <id> PASS|FAIL`` line (visible even when
pytest captures output) before asserting, so a run log doubles as a report.
"""

import hashlib
import statistics
import time

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from ufdoppler.cli import main
from ufdoppler.config import SolverConfig
from ufdoppler.core import CasoratiMatrix, SequenceDims
from ufdoppler.fourier import conv2_adjoint, conv2_circ
from ufdoppler.linalg import full_svd, partial_svd, rank_estimate, svt
from ufdoppler.metrics import (
    DB_FLOOR,
    cr_sweep,
    median_cr,
    power_doppler,
    score_against_truth,
    vessel_patch,
)
from ufdoppler.phantom import PhantomConfig, generate
from ufdoppler.psf import PsfKernel
from ufdoppler.solvers import fast_bdrpca, godec, lasso_admm, run_method, soft_threshold, svd_filter

from conftest import crandn

pytestmark = pytest.mark.slow

LAM = 0.3
SEEDS = range(5)
# 64x64 images leave no 16x16 background placement once vessels are masked
SWEEP_PATCH, SWEEP_STRIDE = (8, 8), 4
SVD_TB_GRID = (10, 20, 50, 100, 200)
GODEC_TAU_GRID = (0.001, 0.002, 0.003, 0.005, 0.01)

_traces = []  # (label, converged, final_delta, tolerance) from every solver run here


def report(pytestconfig, cid, ok, detail):
    line = f"ACCEPTANCE {cid} {'PASS' if ok else 'FAIL'}  {detail}"
    capman = pytestconfig.pluginmanager.getplugin("capturemanager")
    with capman.global_and_fixture_disabled():
        print("\n" + line, flush=True)
    assert ok, line


def _record(label, r):
    _traces.append((label, r.converged, r.final_delta, r.tolerance))
    return r


def _direct_conv(x, h):
    nz, nx = x.shape
    kz, kx = h.shape
    cz, cx = kz // 2, kx // 2
    out = np.zeros_like(x, dtype=complex)
    for z in range(nz):
        for xx in range(nx):
            acc = 0j
            for a in range(kz):
                for b in range(kx):
                    acc += h[a, b] * x[(z - a + cz) % nz, (xx - b + cx) % nx]
            out[z, xx] = acc
    return out


@pytest.fixture(scope="module")
def default_phantom():
    return generate(PhantomConfig(seed=0))


@pytest.fixture(scope="module")
def known_run(default_phantom):
    S, truth = default_phantom
    t0 = time.perf_counter()
    r = _record("fast known seed0", fast_bdrpca(S, SolverConfig(lam=LAM), psf=truth.psf))
    return r, time.perf_counter() - t0


@pytest.fixture(scope="module")
def blind_runs():
    # seed -> (phantom, truth, blind fast result); seed 0 doubles as the blind-recovery run
    out = {}
    for seed in SEEDS:
        S, truth = generate(PhantomConfig(seed=seed))
        out[seed] = (S, truth, _record(f"fast blind seed{seed}", fast_bdrpca(S, SolverConfig(lam=LAM))))
    return out


def test_c1_svt_oracle(pytestconfig):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(200):
        m, n = rng.integers(1, 41, size=2)
        A = crandn(rng, m, n)
        s = full_svd(A).sigma
        tau = rng.uniform(0, 1.2) * s[0]
        got = np.linalg.svd(svt(A, tau), compute_uv=False)
        worst = max(worst, np.abs(got - np.maximum(s - tau, 0)).max())
    wall = time.perf_counter() - t0
    report(pytestconfig, "c1", worst <= 1e-10 and wall < 10, f"max abs err {worst:.2e}, {wall:.2f}s")


def test_c2_partial_svd_oracle(pytestconfig):
    rng = np.random.default_rng(2)
    t0 = time.perf_counter()
    worst_rel, worst_angle, gapped = 0.0, 0.0, 0
    for k in range(100):
        A = crandn(rng, 100, 40)
        ref = full_svd(A)
        p = partial_svd(A, 10, random_state=k)
        worst_rel = max(worst_rel, np.max(np.abs(p.sigma - ref.sigma[:10]) / ref.sigma[:10]))
        if (ref.sigma[9] - ref.sigma[10]) > 1e-3 * ref.sigma[0]:
            gapped += 1
            ang = max(subspace_angles(p.U, ref.U[:, :10]).max(), subspace_angles(p.V, ref.V[:, :10]).max())
            worst_angle = max(worst_angle, ang)
    wall = time.perf_counter() - t0
    ok = worst_rel <= 1e-8 and worst_angle <= 1e-6 and wall < 30
    report(pytestconfig, "c2", ok,
           f"max rel err {worst_rel:.2e}, max angle {worst_angle:.2e} over {gapped} gapped, {wall:.2f}s")


def test_c3_rank_estimation(pytestconfig):
    rng = np.random.default_rng(3)
    dims = SequenceDims(16, 16, 60)
    t0 = time.perf_counter()
    hits = 0
    for _ in range(50):
        r = int(rng.integers(2, 16))
        A = crandn(rng, 256, r) @ crandn(rng, r, 60)
        s1 = np.linalg.norm(A, 2)
        A = A + 1e-4 * s1 * crandn(rng, 256, 60) / np.sqrt(2 * 256 * 60)
        hits += rank_estimate(full_svd(A).sigma, dims).r == r
    wall = time.perf_counter() - t0
    report(pytestconfig, "c3", hits >= 45 and wall < 20, f"{hits}/50 exact, {wall:.2f}s")


def test_c4_lasso_delta(pytestconfig):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(10):
        y = CasoratiMatrix(crandn(rng, 64, 6), SequenceDims(8, 8, 6))
        lam = rng.uniform(0.1, 2.0)
        x = lasso_admm(y, PsfKernel.delta((3, 3)), lam)
        ref = soft_threshold(np.array(y.data), lam / 2)
        worst = max(worst, np.linalg.norm(x.data - ref) / np.linalg.norm(ref))
    report(pytestconfig, "c4", worst <= 1e-6, f"max rel err {worst:.2e}")


def test_c5_convolution(pytestconfig):
    rng = np.random.default_rng(5)
    worst_conv, worst_adj = 0.0, 0.0
    for _ in range(25):
        nz, nx = rng.integers(4, 13, size=2)
        kz, kx = rng.integers(1, min(nz, nx) + 1, size=2)
        frame = crandn(rng, nz, nx)
        h = crandn(rng, kz, kx)
        x = CasoratiMatrix(frame.reshape(-1, 1, order="F"), SequenceDims(nz, nx, 1))
        got = conv2_circ(x, h).data.reshape(nz, nx, order="F")
        worst_conv = max(worst_conv, np.abs(got - _direct_conv(frame, h)).max())
        v = CasoratiMatrix(crandn(rng, nz * nx, 1), x.dims)
        lhs = np.vdot(v.data, conv2_circ(x, h).data)
        rhs = np.vdot(conv2_adjoint(v, h).data, x.data)
        worst_adj = max(worst_adj, abs(lhs - rhs))
    report(pytestconfig, "c5", worst_conv <= 1e-10 and worst_adj <= 1e-10,
           f"conv err {worst_conv:.2e}, adjoint err {worst_adj:.2e}")


def test_c6_known_psf_recovery(pytestconfig, default_phantom, known_run):
    _, truth = default_phantom
    r, wall = known_run
    sc = score_against_truth(r, truth)
    ok = sc.tissue_rel_error <= 0.05 and sc.f1 >= 0.9 and wall < 120
    report(pytestconfig, "c6", ok,
           f"tissue err {sc.tissue_rel_error:.2e}, F1 {sc.f1:.3f}, rank {r.rank}, {wall:.1f}s")


def test_c7_blind_recovery(pytestconfig, known_run, blind_runs):
    known, _ = known_run
    _, truth, blind = blind_runs[0]
    sc = score_against_truth(blind, truth)
    a = power_doppler(blind.blood_x).data.ravel()
    b = power_doppler(known.blood_x).data.ravel()
    pearson = float(np.corrcoef(a, b)[0, 1])
    live = (a > DB_FLOOR) | (b > DB_FLOOR)
    pearson_live = float(np.corrcoef(a[live], b[live])[0, 1])
    k_true = truth.psf.kernel.ravel()
    k_est = blind.psf.kernel.ravel()
    psf_corr = abs(np.vdot(k_true, k_est)) / (np.linalg.norm(k_true) * np.linalg.norm(k_est))
    report(pytestconfig, "c7", sc.f1 >= 0.8 and pearson >= 0.8,
           f"F1 {sc.f1:.3f}, PD Pearson {pearson:.6f} (non-floor pixels {pearson_live:.4f}), "
           f"PSF corr {psf_corr:.3f}")


def _tuned(S, truth, runner, grid):
    """The grid value with the smallest blood error; selection favours the competitor."""
    best = None
    for value in grid:
        r = runner(value)
        err = score_against_truth(r, truth).blood_rel_error
        if best is None or err < best[0]:
            best = (err, value, r)
    return best


def test_c8_method_ordering(pytestconfig, blind_runs):
    wins, lines = 0, []
    for seed, (S, truth, fast) in blind_runs.items():
        rank = fast.rank
        mask = truth.vessel_mask(dilate=2)
        r1 = vessel_patch(truth.vessel_mask())

        def med(res):
            return median_cr(cr_sweep(power_doppler(res.blood_x), r1, *SWEEP_PATCH, SWEEP_STRIDE, mask=mask))

        _, tb, svd_r = _tuned(S, truth, lambda tb: svd_filter(S, rank, tb), SVD_TB_GRID)
        _, tau, god_r = _tuned(S, truth, lambda tau: _record(f"godec seed{seed}", godec(S, rank, tau)),
                               GODEC_TAU_GRID)
        cr_f, cr_s, cr_g = med(fast), med(svd_r), med(god_r)
        # R1 sits on the vessel, so CR is negative and a stronger contrast is a more negative CR
        win = abs(cr_f) >= abs(cr_s) and abs(cr_f) >= abs(cr_g)
        wins += win
        lines.append(f"seed{seed}: fast {cr_f:.1f} svd(t_b={tb}) {cr_s:.1f} godec(tau={tau}) {cr_g:.1f} dB")
    report(pytestconfig, "c8", wins >= 4, f"fast strongest in {wins}/5 seeds; " + "; ".join(lines))


def test_c9_runtime_ordering(pytestconfig, default_phantom):
    S, _ = default_phantom
    cfg = SolverConfig(lam=LAM, rho=5.0, mu=1.0, max_outer=5, max_inner=20, t_c=5, t_b=100, r_f=5)
    walls = {}
    for method in ("svd", "fast-bdrpca", "bdrpca"):
        samples = []
        for _ in range(3):
            t0 = time.perf_counter()
            run_method(method, S, cfg)
            samples.append(time.perf_counter() - t0)
        walls[method] = statistics.median(samples)
    ok = walls["fast-bdrpca"] <= 0.7 * walls["bdrpca"] and walls["svd"] <= walls["fast-bdrpca"]
    report(pytestconfig, "c9", ok,
           "median wall " + ", ".join(f"{m} {w:.2f}s" for m, w in walls.items())
           + f"; fast/bdrpca {walls['fast-bdrpca'] / walls['bdrpca']:.2f}")


def test_c10_stopping_contract(pytestconfig, known_run, blind_runs):
    converged = [t for t in _traces if t[1]]
    bad = [t[0] for t in converged if not t[2] <= t[3]]
    eps_ok = all(abs(t[3] - 1e-6 * np.linalg.norm(blind_runs[0][0].data)) < 1e-9 * t[3]
                 for t in converged if t[0].endswith("seed0"))
    ok = bool(converged) and not bad and eps_ok
    report(pytestconfig, "c10", ok,
           f"{len(converged)}/{len(_traces)} runs converged, {len(bad)} violate delta <= 1e-6*||S||_F")


def _digests(d):
    return {p.relative_to(d).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(d.rglob("*.ufd"))}


def test_c11_bench_determinism(pytestconfig, tmp_path):
    assert main(["phantom", "--seed", "11", "-o", str(tmp_path / "ph")]) == 0
    args = ["bench", "-i", str(tmp_path / "ph" / "s.ufd"), "--seed", "5", "--lambda", str(LAM),
            "--tc", "5", "--tb", "100", "--rg", "5", "--taug", "0.002",
            "--max-outer", "2", "--max-inner", "10"]
    assert main(args + ["-o", str(tmp_path / "a")]) == 0
    assert main(args + ["-o", str(tmp_path / "b")]) == 0
    da, db = _digests(tmp_path / "a"), _digests(tmp_path / "b")
    report(pytestconfig, "c11", bool(da) and da == db,
           f"{len(da)} X/T/PSF files compared, {sum(da[k] == db.get(k) for k in da)} identical")
