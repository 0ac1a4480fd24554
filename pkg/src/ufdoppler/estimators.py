"""scikit-learn style wrappers around the decomposition solvers.

Each estimator takes a Casorati sequence (a :class:`CasoratiMatrix` or a
``(n_z, n_x, n_t)`` cube) in ``fit`` and exposes ``blood_``, ``tissue_``,
``psf_`` and ``result_``. ``transform`` returns the blood estimate as a
cube, which is the part a Doppler pipeline feeds to rendering.

>>> from ufdoppler.phantom import PhantomConfig, generate
>>> from ufdoppler.core import SequenceDims
>>> S, truth = generate(PhantomConfig(dims=SequenceDims(16, 16, 20), r_true=2,
...                                   vessel_count=1, scatterer_spacing_px=8))
>>> est = SVDFilter(t_c=2).fit(S)
>>> est.blood_.shape
(256, 20)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .config import SolverConfig
from .solvers import run_method
from .validation import check_sequence


class _Decomposer(TransformerMixin, BaseEstimator):
    _method = ""
    # estimator parameter -> SolverConfig field
    _config_fields: dict = {}

    def _config(self) -> SolverConfig:
        changes = {}
        for param, attr in self._config_fields.items():
            changes[attr] = getattr(self, param)
        return SolverConfig(**changes)

    def _psf(self):
        return None

    def fit(self, X, y=None):
        S = check_sequence(X)
        self.result_ = run_method(self._method, S, self._config(), psf=self._psf())
        self.dims_ = S.dims
        self.blood_ = self.result_.blood_x.data
        self.tissue_ = self.result_.tissue_t.data
        self.psf_ = None if self.result_.psf is None else self.result_.psf.kernel
        self.n_iter_ = self.result_.n_iter
        self.converged_ = self.result_.converged
        return self

    def transform(self, X=None):
        """Blood estimate of the fitted sequence as a cube.

        The decomposition is transductive, so ``X`` must be the sequence
        passed to ``fit`` (or ``None``).
        """
        if not hasattr(self, "result_"):
            raise AttributeError(f"{type(self).__name__} is not fitted yet; call fit first")
        if X is not None:
            S = check_sequence(X)
            if S.dims != self.dims_:
                raise ValueError(f"transform got dims {S.dims}, fitted on {self.dims_}")
        return self.result_.blood_x.to_cube()

    def fit_transform(self, X, y=None, **fit_params):
        return self.fit(X, y).transform(X)

    def power_doppler(self):
        from .metrics import power_doppler

        return power_doppler(self.result_.blood_x)


class SVDFilter(_Decomposer):
    """Keep singular components ``t_c+1 .. t_b`` as blood.

    ``t_c=None`` estimates the tissue rank; ``t_b=None`` keeps every
    remaining component.
    """

    _method = "svd"
    _config_fields = {"t_c": "t_c", "t_b": "t_b"}

    def __init__(self, t_c=None, t_b=None):
        self.t_c = t_c
        self.t_b = t_b


class GoDec(_Decomposer):
    _method = "godec"
    _config_fields = {
        "rank": "r_g", "tau": "tau_g", "power": "godec_power",
        "tol": "epsilon", "max_iter": "max_outer", "random_state": "seed",
    }

    def __init__(self, rank=None, tau=0.0, power=2, tol=1e-6, max_iter=50, random_state=0):
        self.rank = rank
        self.tau = tau
        self.power = power
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state


class _BlindDecomposer(_Decomposer):
    def _psf(self):
        return None if self.psf is None else np.asarray(getattr(self.psf, "kernel", self.psf))


class BDRPCA(_BlindDecomposer):
    """Nuclear-norm blind-deconvolved RPCA (ADMM). Pass ``psf`` to fix the kernel."""

    _method = "bdrpca"
    _config_fields = {
        "lam": "lam", "rho": "rho", "mu": "mu", "init_rank": "t_c",
        "tol": "epsilon", "max_outer": "max_outer", "max_inner": "max_inner",
        "psf_shape": "psf_shape", "random_state": "seed",
    }

    def __init__(self, lam=0.3, rho=1.0, mu=1.0, init_rank=None, psf=None, tol=1e-6,
                 max_outer=50, max_inner=200, psf_shape=(15, 15), random_state=0):
        self.lam = lam
        self.rho = rho
        self.mu = mu
        self.init_rank = init_rank
        self.psf = psf
        self.tol = tol
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.psf_shape = psf_shape
        self.random_state = random_state


class FastBDRPCA(_BlindDecomposer):
    """Fixed-rank blind-deconvolved RPCA. ``rank=None`` estimates the tissue rank."""

    _method = "fast-bdrpca"
    _config_fields = {
        "lam": "lam", "rank": "r_f", "tol": "epsilon", "max_outer": "max_outer",
        "max_inner": "max_inner", "psf_shape": "psf_shape", "random_state": "seed",
    }

    def __init__(self, lam=0.3, rank=None, psf=None, tol=1e-6, max_outer=50, max_inner=200,
                 psf_shape=(15, 15), random_state=0):
        self.lam = lam
        self.rank = rank
        self.psf = psf
        self.tol = tol
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.psf_shape = psf_shape
        self.random_state = random_state


__all__ = ["BDRPCA", "FastBDRPCA", "GoDec", "SVDFilter"]
