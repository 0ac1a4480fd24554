"""Command-line front end: ``ufdoppler {phantom,run,render,metrics,bench}``.

Exit codes: 0 on success, 2 for usage or validation errors, 3 when a
solver diverges.
"""

from __future__ import annotations

import argparse
import csv
import logging
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from .config import SolverConfig, read_kv
from .core import SequenceDims, load_sequence, save_sequence
from .exceptions import DivergenceError
from .metrics import (
    DEFAULT_PATCH,
    DEFAULT_STRIDE,
    PatchRect,
    contrast_ratio,
    cr_sweep,
    median_cr,
    power_doppler,
    render_pgm,
    score_against_truth,
    vessel_patch,
    write_sweep_csv,
)
from .phantom import PhantomConfig, generate, load_truth, psf_as_sequence, save_phantom, sequence_as_psf
from .solvers import METHODS, DecompositionResult, run_method

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DIVERGED = 3

log = logging.getLogger("ufdoppler")


class UsageError(Exception):
    """Bad flags or inputs detected after argument parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _dims(text):
    try:
        return SequenceDims.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _shape(text):
    parts = text.lower().split("x")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None


def _patch(text):
    try:
        return PatchRect.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _rank(text):
    if text.lower() == "auto":
        return None
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"rank must be an integer or 'auto', got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("rank must be at least 1")
    return value


# ---------------------------------------------------------------------------
# phantom


def cmd_phantom(args) -> int:
    fields = {
        "dims": args.dims, "seed": args.seed, "r_true": args.r_true,
        "vessel_count": args.vessels, "psf_kind": args.psf_kind,
        "noise_sigma": args.noise, "blood_amplitude_ratio": args.blood_ratio,
        "flow_speed_px_per_frame": args.flow_speed,
    }
    try:
        cfg = PhantomConfig(**{k: v for k, v in fields.items() if v is not None})
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    S, truth = generate(cfg)
    written = save_phantom(args.output, S, truth, cfg)
    for path in written.values():
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# run


_RUN_FLAGS = {
    "lam": "lam", "rank": "r_f", "tc": "t_c", "tb": "t_b", "rg": "r_g", "taug": "tau_g",
    "rho": "rho", "mu": "mu", "eps": "epsilon", "max_outer": "max_outer",
    "max_inner": "max_inner", "seed": "seed",
}


def _solver_config(args, method) -> SolverConfig:
    """Config file first, then flags; flags that were not given leave the file value."""
    cfg = SolverConfig()
    if getattr(args, "config", None):
        cfg = cfg.update_from_mapping(read_kv(args.config), method)
    changes = {}
    for flag, attr in _RUN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            changes[attr] = value
    if getattr(args, "rank_auto", False):
        changes["r_f"] = None
    return cfg.replace(**changes)


def _load_psf(path):
    return sequence_as_psf(load_sequence(path)) if path else None


def write_result(out_dir, result: DecompositionResult) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {"x": out / "x.ufd", "t": out / "t.ufd", "trace": out / "trace.csv"}
    save_sequence(files["x"], result.blood_x)
    save_sequence(files["t"], result.tissue_t)
    if result.psf is not None:
        files["psf"] = out / "psf.ufd"
        save_sequence(files["psf"], psf_as_sequence(result.psf))
    result.write_trace(files["trace"])
    return files


def cmd_run(args) -> int:
    args.rank_auto = args.rank is None and args.rank_given
    cfg = _solver_config(args, args.method)
    S = load_sequence(args.input)
    psf = _load_psf(args.psf)
    t0 = time.perf_counter()
    result = run_method(args.method, S, cfg, psf=psf)
    wall = time.perf_counter() - t0
    write_result(args.output, result)
    if result.info.get("rank_estimate") is not None:
        print(f"estimated rank r_f = {result.rank}")
    print(f"method {result.method}")
    print(f"objective {result.objective!r}")
    print(f"iterations {result.n_iter}")
    print(f"converged {result.converged}")
    print(f"wall_seconds {wall:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# render


def cmd_render(args) -> int:
    x = load_sequence(args.input)
    img = power_doppler(x)
    render_pgm(args.output, img, args.db_min, args.db_max, relative=not args.absolute)
    print(args.output)
    return EXIT_OK


# ---------------------------------------------------------------------------
# metrics


def _image_from(path):
    return power_doppler(load_sequence(path))


def _reference_patch(args, img, truth=None) -> PatchRect:
    if args.r1 is not None:
        return args.r1
    if truth is None:
        raise UsageError("--r1 is required unless --truth is given")
    return vessel_patch(truth.vessel_mask(), width=min(DEFAULT_PATCH[1], img.shape[1]))


def cmd_metrics(args) -> int:
    if args.kind == "score":
        if not args.truth:
            raise UsageError("metrics score needs --truth")
        result = load_result(args.input)
        truth = load_truth(args.truth)
        score = score_against_truth(result, truth)
        w = csv.writer(sys.stdout)
        w.writerow(list(score.to_mapping()))
        w.writerow([repr(v) for v in score.to_mapping().values()])
        return EXIT_OK

    img = _image_from(args.input)
    truth = load_truth(args.truth) if args.truth else None
    try:
        r1 = _reference_patch(args, img, truth)
        r1.check_within(img.shape)
        if args.kind == "cr":
            if args.r2 is None:
                raise UsageError("metrics cr needs --r2")
            print(repr(contrast_ratio(img, r1, args.r2)))
            return EXIT_OK
        mask = truth.vessel_mask(dilate=args.mask_dilate) if truth is not None else None
        ph, pw = args.patch
        entries = cr_sweep(img, r1, ph, pw, args.stride, mask=mask)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.output:
        write_sweep_csv(args.output, entries)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(["z0", "x0", "cr_db"])
        for e in entries:
            w.writerow([e.z0, e.x0, repr(e.cr_db)])
    if truth is not None or args.output:
        print(f"# r1 {r1.z0},{r1.x0},{r1.height},{r1.width} median_cr_db {median_cr(entries)!r}",
              file=sys.stderr)
    return EXIT_OK


def load_result(directory) -> DecompositionResult:
    d = Path(directory)
    x = load_sequence(d / "x.ufd")
    t = load_sequence(d / "t.ufd")
    psf = _load_psf(d / "psf.ufd") if (d / "psf.ufd").exists() else None
    return DecompositionResult(x, t, psf, [], "loaded", True, 0.0)


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    S = load_sequence(args.input)
    truth = load_truth(args.truth) if args.truth else None
    methods = args.methods or list(METHODS)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    rows, summary = [], []
    failed = False
    for method in methods:
        cfg = _solver_config(args, method)
        times, result, error = [], None, None
        for rep in range(1, args.reps + 1):
            t0 = time.perf_counter()
            try:
                result = run_method(method, S, cfg)
            except (DivergenceError, ValueError, np.linalg.LinAlgError) as exc:
                error = exc
                rows.append([method, rep, "", "failed"])
                break
            times.append(time.perf_counter() - t0)
            rows.append([method, rep, f"{times[-1]:.6f}", "ok"])
        if error is not None:
            failed = True
            log.warning("%s failed: %s", method, error)
            summary.append((method, None, None, "failed"))
            continue
        write_result(out / method, result)
        cr = None
        if truth is not None:
            img = power_doppler(result.blood_x)
            r1 = args.r1 or vessel_patch(truth.vessel_mask(), width=min(DEFAULT_PATCH[1], img.shape[1]))
            try:
                mask = truth.vessel_mask(dilate=args.mask_dilate)
                cr = median_cr(cr_sweep(img, r1, *args.patch, args.stride, mask=mask))
            except ValueError as exc:
                log.warning("%s: no CR: %s", method, exc)
        summary.append((method, statistics.median(times), cr, "ok"))

    with open(out / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "rep", "seconds", "status"])
        w.writerows(rows)
    print(f"{'method':<12} {'median_s':>10} {'median_cr_db':>13}  status")
    for method, wall, cr, status in summary:
        wall_s = f"{wall:10.3f}" if wall is not None else f"{'-':>10}"
        cr_s = f"{cr:13.2f}" if cr is not None else f"{'-':>13}"
        print(f"{method:<12} {wall_s} {cr_s}  {status}")
    if failed:
        print("warning: at least one method failed", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_solver_flags(p):
    p.add_argument("--config", help="flat key = value file; flags override it")
    p.add_argument("--lambda", dest="lam", type=float, help="sparsity weight")
    p.add_argument("--rank", type=_rank, help="fixed tissue rank r_f, or 'auto'")
    p.add_argument("--tc", type=int, help="SVD filter: last tissue component")
    p.add_argument("--tb", type=int, help="SVD filter: last blood component")
    p.add_argument("--rg", type=int, help="GoDec rank")
    p.add_argument("--taug", type=float, help="GoDec hard threshold")
    p.add_argument("--rho", type=float, help="nuclear-norm weight (bdrpca)")
    p.add_argument("--mu", type=float, help="augmented Lagrangian penalty (bdrpca)")
    p.add_argument("--eps", type=float, help="relative stopping tolerance")
    p.add_argument("--max-outer", dest="max_outer", type=int)
    p.add_argument("--max-inner", dest="max_inner", type=int)
    p.add_argument("--seed", type=int)


def _add_sweep_flags(p):
    p.add_argument("--r1", type=_patch, help="reference patch z0,x0,height,width")
    p.add_argument("--patch", type=_shape, default=DEFAULT_PATCH, help="moving patch HxW (default 16x16)")
    p.add_argument("--stride", type=int, default=DEFAULT_STRIDE)
    p.add_argument("--mask-dilate", dest="mask_dilate", type=int, default=2,
                   help="with --truth, skip placements within this many pixels of a vessel")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ufdoppler", description="Tissue/blood separation for ultrafast Doppler sequences.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate a synthetic sequence with ground truth")
    p.add_argument("--dims", type=_dims, default=None, help="NZxNXxNT, e.g. 64x64x200")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--r-true", dest="r_true", type=int)
    p.add_argument("--vessels", type=int)
    p.add_argument("--psf-kind", dest="psf_kind", choices=["gaussian", "anisotropic-gaussian", "delta"])
    p.add_argument("--noise", type=float)
    p.add_argument("--blood-ratio", dest="blood_ratio", type=float)
    p.add_argument("--flow-speed", dest="flow_speed", type=float)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("run", help="decompose one sequence")
    p.add_argument("--method", required=True, choices=METHODS)
    _add_solver_flags(p)
    p.add_argument("--psf", help="known PSF as a UFD1 file (skips PSF estimation)")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("render", help="write a Power Doppler PGM")
    p.add_argument("-i", "--input", required=True, help="blood sequence (x.ufd)")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--db-min", dest="db_min", type=float, default=-40.0)
    p.add_argument("--db-max", dest="db_max", type=float, default=0.0)
    p.add_argument("--absolute", action="store_true", help="window in absolute dB instead of relative to max")
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("metrics", help="contrast ratio, CR sweep or truth scores")
    p.add_argument("kind", choices=["cr", "sweep", "score"])
    p.add_argument("-i", "--input", required=True, help="x.ufd for cr/sweep, a run directory for score")
    p.add_argument("--r2", type=_patch)
    p.add_argument("--truth", help="phantom directory")
    p.add_argument("-o", "--output", help="CSV path for sweep")
    _add_sweep_flags(p)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("bench", help="time every method on one input")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--truth", help="phantom directory, enables the CR column")
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--methods", nargs="+", choices=METHODS)
    _add_solver_flags(p)
    _add_sweep_flags(p)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        # distinguishes "--rank auto" from an absent --rank
        args.rank_given = any(a == "--rank" or a.startswith("--rank=") for a in argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(name)s: %(message)s")
        if getattr(args, "reps", 1) < 1:
            raise UsageError("--reps must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(f"ufdoppler: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"ufdoppler: solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"ufdoppler: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"ufdoppler: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
