"""Separation of ultrafast Doppler sequences into tissue, blood and noise.

The main entry points are the solvers in :mod:`ufdoppler.solvers`
(``svd_filter``, ``godec``, ``bdrpca``, ``fast_bdrpca``), their
scikit-learn style wrappers in :mod:`ufdoppler.estimators`, and the
synthetic phantom in :mod:`ufdoppler.phantom` used to check them.
"""

from .config import SolverConfig
from .core import CasoratiMatrix, SequenceDims, load_sequence, save_sequence, to_casorati, to_cube
from .estimators import BDRPCA, FastBDRPCA, GoDec, SVDFilter
from .exceptions import DimensionError, DivergenceError, NumericError, UFDFormatError
from .fourier import conv2_adjoint, conv2_circ
from .linalg import full_svd, low_rank_project, partial_svd, rank_estimate, svt
from .metrics import PatchRect, contrast_ratio, cr_sweep, power_doppler, score_against_truth
from .phantom import PhantomConfig, generate
from .psf import PsfKernel, blind_deconv_update, homomorphic_magnitude
from .solvers import DecompositionResult, bdrpca, fast_bdrpca, godec, lasso_admm, run_method, svd_filter

__version__ = "0.1.0"

__all__ = [
    "BDRPCA",
    "CasoratiMatrix",
    "DecompositionResult",
    "DimensionError",
    "DivergenceError",
    "FastBDRPCA",
    "GoDec",
    "NumericError",
    "PatchRect",
    "PhantomConfig",
    "PsfKernel",
    "SVDFilter",
    "SequenceDims",
    "SolverConfig",
    "UFDFormatError",
    "bdrpca",
    "blind_deconv_update",
    "contrast_ratio",
    "conv2_adjoint",
    "conv2_circ",
    "cr_sweep",
    "fast_bdrpca",
    "full_svd",
    "generate",
    "godec",
    "homomorphic_magnitude",
    "lasso_admm",
    "load_sequence",
    "low_rank_project",
    "partial_svd",
    "power_doppler",
    "rank_estimate",
    "run_method",
    "save_sequence",
    "score_against_truth",
    "svd_filter",
    "svt",
    "to_casorati",
    "to_cube",
]
