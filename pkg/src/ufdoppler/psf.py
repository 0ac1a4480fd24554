"""PSF estimation: homomorphic magnitude spectrum and per-frequency phase fit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .fourier import crop_kernel, embed_kernel, fft2, ifft2

DEFAULT_KERNEL_SHAPE = (15, 15)
DEFAULT_SMOOTH_SIGMA = 3.0


@dataclass
class PsfKernel:
    """Compact complex kernel plus the magnitude spectrum it was fitted to.

    ``spectrum`` is the full-grid spectrum before cropping to
    ``kernel.shape``; its modulus equals ``mag_spectrum`` exactly.
    Both are ``None`` for kernels that were supplied rather than estimated.
    """

    kernel: np.ndarray
    mag_spectrum: np.ndarray | None = None
    spectrum: np.ndarray | None = None

    @property
    def shape(self):
        return self.kernel.shape

    @classmethod
    def delta(cls, shape=(1, 1)):
        k = np.zeros(shape, dtype=np.complex128)
        k[shape[0] // 2, shape[1] // 2] = 1.0
        return cls(k)

    def normalized(self) -> "PsfKernel":
        return PsfKernel(self.kernel / np.linalg.norm(self.kernel), self.mag_spectrum, self.spectrum)

    def padded(self, frame_shape):
        return embed_kernel(self.kernel, frame_shape)


def homomorphic_magnitude(img, smooth_sigma: float = DEFAULT_SMOOTH_SIGMA):
    """Smooth envelope of the log-magnitude spectrum, max-normalized to 1.

    ``img`` is one ``(n_z, n_x)`` frame, or an ``(n_z, n_x, n_frames)``
    stack whose per-frame log spectra are averaged before smoothing.
    The smoother is a periodic Gaussian of width ``smooth_sigma`` bins.
    """
    a = np.asarray(img, dtype=np.complex128)
    if a.ndim not in (2, 3):
        raise ValueError(f"expected a frame or a stack of frames, got shape {a.shape}")
    if smooth_sigma <= 0:
        raise ValueError(f"smooth_sigma must be positive, got {smooth_sigma}")
    mag = np.abs(fft2(a))
    peak = mag.max()
    if peak == 0:
        raise ValueError("cannot estimate a PSF spectrum from an all-zero image")
    logmag = np.log(mag + 1e-12 * peak)
    if a.ndim == 3:
        logmag = logmag.mean(axis=2)
    env = np.exp(gaussian_filter(logmag, smooth_sigma, mode="wrap"))
    return env / env.max()


def _circular_centroid(energy):
    center = []
    for axis in (0, 1):
        marginal = energy.sum(axis=1 - axis)
        n = marginal.size
        phase = np.angle(np.sum(marginal * np.exp(2j * np.pi * np.arange(n) / n)))
        center.append(int(np.round(phase * n / (2 * np.pi))) % n)
    return tuple(center)


def fit_phase(m_st, m_x, h_tilde, rel_floor=1e-12):
    """Spectrum of modulus ``h_tilde`` closest to explaining ``m_st`` from ``m_x``.

    Per frequency, ``|M_st - H * M_x|^2`` with ``|H|`` fixed is minimized by
    aligning the phase of ``H`` with ``M_st * conj(M_x)``. Frequencies where
    ``M_x`` vanishes get phase zero.

    ``m_st`` and ``m_x`` may also be ``(n_z, n_x, n_frames)`` stacks; the
    cross-spectra are then summed over frames, which minimizes the misfit
    summed over all frames rather than the misfit of the averages.
    """
    F_st = fft2(m_st)
    F_x = fft2(m_x)
    cross = F_st * F_x.conj()
    power = np.abs(F_x) ** 2
    if cross.ndim == 3:
        cross = cross.sum(axis=2)
        power = power.sum(axis=2)
    phase = np.angle(cross)
    phase[power <= rel_floor**2 * power.max()] = 0.0
    return h_tilde * np.exp(1j * phase)


def blind_deconv_update(m_st, m_x, h_tilde, kernel_shape=DEFAULT_KERNEL_SHAPE) -> PsfKernel:
    """Magnitude-constrained least-squares PSF update.

    Parameters
    ----------
    m_st : ndarray (n_z, n_x)
        Temporal average of the tissue-free data ``S - T``, or the full
        ``(n_z, n_x, n_t)`` stack of its frames.
    m_x : ndarray (n_z, n_x)
        Temporal average of the current blood estimate (or its frames,
        matching ``m_st``).
    h_tilde : ndarray (n_z, n_x)
        Target spectrum magnitude.
    kernel_shape : tuple of int
        Support of the returned kernel; cropped around the energy centroid
        of the inverse transform and renormalized to unit Frobenius norm.
    """
    h_tilde = np.asarray(h_tilde, dtype=np.float64)
    m_st = np.asarray(m_st)
    m_x = np.asarray(m_x)
    if m_st.ndim not in (2, 3) or m_x.shape != m_st.shape or h_tilde.shape != m_st.shape[:2]:
        raise ValueError("m_st, m_x and h_tilde must share the frame shape")
    if np.any(h_tilde < 0) or not np.any(h_tilde):
        raise ValueError("h_tilde must be nonnegative and not all zero")
    kz = min(kernel_shape[0], m_st.shape[0])
    kx = min(kernel_shape[1], m_st.shape[1])
    spectrum = fit_phase(m_st, m_x, h_tilde)
    full = ifft2(spectrum)
    center = _circular_centroid(np.abs(full) ** 2)
    kernel = crop_kernel(full, (kz, kx), center)
    norm = np.linalg.norm(kernel)
    if norm == 0:
        raise ValueError("estimated kernel vanished after cropping")
    return PsfKernel(kernel / norm, mag_spectrum=h_tilde, spectrum=spectrum)


def psf_objective(m_st, m_x, h) -> float:
    """``||m_st - h (*) m_x||_F^2`` for one frame."""
    spec = fft2(embed_kernel(getattr(h, "kernel", h), np.shape(m_st)))
    resid = np.asarray(m_st) - ifft2(spec * fft2(m_x))
    return float(np.vdot(resid, resid).real)


def gaussian_kernel(shape=DEFAULT_KERNEL_SHAPE, sigma_z=2.0, sigma_x=3.0) -> PsfKernel:
    """Unit-norm centered Gaussian kernel."""
    kz, kx = shape
    z = np.arange(kz) - kz // 2
    x = np.arange(kx) - kx // 2
    k = np.exp(-0.5 * (z[:, None] / sigma_z) ** 2 - 0.5 * (x[None, :] / sigma_x) ** 2)
    return PsfKernel((k / np.linalg.norm(k)).astype(np.complex128))
