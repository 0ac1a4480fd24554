"""Input checks used by the solvers and estimators.

scikit-learn's ``check_array`` rejects complex input, so IQ data goes
through these instead.
"""

import numbers

import numpy as np

from .core import CasoratiMatrix, as_casorati
from .exceptions import DimensionError, NumericError


def check_complex_matrix(A, name="A"):
    arr = np.asarray(A)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2D, got shape {arr.shape}")
    arr = arr.astype(np.complex128, copy=False)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} contains non-finite entries")
    return arr


def check_rank(r, shape, name="r"):
    kmax = min(shape)
    if not isinstance(r, numbers.Integral) or not 1 <= r <= kmax:
        raise ValueError(f"{name} must be an integer in [1, {kmax}], got {r!r}")
    return int(r)


def check_nonneg(value, name):
    if value is None or not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a finite non-negative number, got {value!r}")
    return float(value)


def check_positive(value, name):
    if value is None or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a finite positive number, got {value!r}")
    return float(value)


def check_sequence(S, dims=None) -> CasoratiMatrix:
    """Accept a CasoratiMatrix, a 3D cube, or a 2D array plus dims."""
    m = as_casorati(S, dims)
    if not np.all(np.isfinite(m.data)):
        raise NumericError("sequence contains non-finite entries")
    return m


def check_random_state(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)
