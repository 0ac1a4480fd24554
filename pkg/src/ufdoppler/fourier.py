"""Per-frame 2D FFTs and circulant convolution of Casorati sequences.

Forward transforms are unnormalized, inverse transforms carry the
``1 / (n_z * n_x)`` factor. A ``K_z x K_x`` kernel is embedded in the frame
grid with its center pixel ``(K_z // 2, K_x // 2)`` at index ``(0, 0)``, so a
centered delta is exactly the identity.
"""

import numpy as np
import scipy.fft

from .core import CasoratiMatrix
from .exceptions import DimensionError


def fft2(frame):
    return scipy.fft.fft2(np.asarray(frame, dtype=np.complex128), axes=(0, 1))


def ifft2(spectrum):
    return scipy.fft.ifft2(np.asarray(spectrum, dtype=np.complex128), axes=(0, 1))


def _kernel_array(h):
    k = np.asarray(getattr(h, "kernel", h), dtype=np.complex128)
    if k.ndim != 2:
        raise DimensionError(f"kernel must be 2D, got shape {k.shape}")
    return k


def embed_kernel(h, frame_shape):
    """Zero-pad a kernel to ``frame_shape`` with its center wrapped to the origin."""
    k = _kernel_array(h)
    nz, nx = frame_shape
    kz, kx = k.shape
    if kz > nz or kx > nx:
        raise ValueError(f"kernel {k.shape} larger than frame {tuple(frame_shape)}")
    padded = np.zeros((nz, nx), dtype=np.complex128)
    padded[:kz, :kx] = k
    return np.roll(padded, (-(kz // 2), -(kx // 2)), axis=(0, 1))


def crop_kernel(padded, kernel_shape, center=(0, 0)):
    """Cut a ``kernel_shape`` window centered on ``center`` (circular indexing)."""
    kz, kx = kernel_shape
    cz, cx = center
    rows = (np.arange(kz) - kz // 2 + cz) % padded.shape[0]
    cols = (np.arange(kx) - kx // 2 + cx) % padded.shape[1]
    return padded[np.ix_(rows, cols)]


def kernel_spectrum(h, frame_shape):
    return fft2(embed_kernel(h, frame_shape))


class CirculantConvolution:
    """Frame-wise circulant convolution with one fixed kernel.

    Operates on raw Casorati arrays of shape ``(n_z * n_x, n_t)``; the
    kernel spectrum is computed once. Inputs in Fortran order (frames
    contiguous) avoid a copy per transform, and outputs come back in
    Fortran order.
    """

    def __init__(self, h, frame_shape):
        self.frame_shape = tuple(frame_shape)
        self.spectrum = kernel_spectrum(h, self.frame_shape)
        self.power = np.abs(self.spectrum) ** 2
        # frame-major layout: [t, x, z]
        self._spec_t = np.ascontiguousarray(self.spectrum.T)[None]
        self._spec_t_conj = self._spec_t.conj()
        self._power_t = np.ascontiguousarray(self.power.T)[None]

    def spectra(self, X):
        nz, nx = self.frame_shape
        return scipy.fft.fft2(X.T.reshape(-1, nx, nz), axes=(1, 2))

    def from_spectra(self, F):
        out = scipy.fft.ifft2(F, axes=(1, 2), overwrite_x=True)
        return out.reshape(out.shape[0], -1).T

    def forward(self, X):
        F = self.spectra(X)
        F *= self._spec_t
        return self.from_spectra(F)

    def adjoint(self, Y):
        F = self.spectra(Y)
        F *= self._spec_t_conj
        return self.from_spectra(F)

    def solve_shifted(self, rhs, weight, shift):
        """Solve ``(weight * H^H H + shift * I) X = rhs`` frame-wise."""
        F = self.spectra(rhs)
        key = (weight, shift)
        if getattr(self, "_denom_key", None) != key:
            self._denom = weight * self._power_t + shift
            self._denom_key = key
        F /= self._denom
        return self.from_spectra(F)


def _check_against(x, h):
    if not isinstance(x, CasoratiMatrix):
        raise TypeError("expected a CasoratiMatrix")
    return CirculantConvolution(h, x.dims.frame_shape)


def conv2_circ(x: CasoratiMatrix, h) -> CasoratiMatrix:
    """Convolve every frame of ``x`` circularly with the kernel ``h``."""
    op = _check_against(x, h)
    return CasoratiMatrix(op.forward(np.array(x.data)), x.dims)


def conv2_adjoint(y: CasoratiMatrix, h) -> CasoratiMatrix:
    """Adjoint of :func:`conv2_circ` (correlation with ``h``)."""
    op = _check_against(y, h)
    return CasoratiMatrix(op.adjoint(np.array(y.data)), y.dims)
