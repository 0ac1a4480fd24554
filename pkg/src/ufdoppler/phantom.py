"""Synthetic Doppler sequences with known tissue, blood, PSF and noise.

The tissue is an exact rank-``r_true`` sum of dense complex spatial maps
times slowly drifting temporal factors. Blood is a set of point scatterers
moving along smooth vessel paths, each with a Doppler phase rotation.
The acquired data is ``S = tissue + psf (*) blood + noise``.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .config import read_kv, write_kv
from .core import CasoratiMatrix, SequenceDims, load_sequence, save_sequence, to_casorati
from .fourier import CirculantConvolution
from .psf import PsfKernel, gaussian_kernel

PSF_KINDS = ("gaussian", "anisotropic-gaussian", "delta")

# Doppler phase advances 2 * pi * 2 * speed / wavelength per frame.
_WAVELENGTH_PX = 8.0


@dataclass
class PhantomConfig:
    dims: SequenceDims = dataclasses.field(default_factory=lambda: SequenceDims(64, 64, 200))
    r_true: int = 5
    tissue_amplitude: float = 1.0
    tissue_drift: float = 0.05
    vessel_count: int = 3
    vessel_width_px: float = 1.0
    scatterer_spacing_px: float = 16.0
    flow_speed_px_per_frame: float = 0.5
    blood_amplitude_ratio: float = 0.05
    psf_kind: str = "gaussian"
    psf_sigma_z: float = 2.0
    psf_sigma_x: float = 3.0
    psf_angle_deg: float = 30.0
    psf_shape: tuple = (15, 15)
    noise_sigma: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if not isinstance(self.dims, SequenceDims):
            self.dims = SequenceDims(*self.dims)
        self.psf_shape = tuple(int(v) for v in self.psf_shape)
        d = self.dims
        if not 0 <= self.r_true < min(d.n_pixels, d.n_t):
            raise ValueError(f"r_true must be in [0, {min(d.n_pixels, d.n_t)}), got {self.r_true}")
        if not 0 <= self.tissue_drift < 1:
            raise ValueError("tissue_drift must lie in [0, 1)")
        if self.psf_kind not in PSF_KINDS:
            raise ValueError(f"psf_kind must be one of {PSF_KINDS}, got {self.psf_kind!r}")
        for name in ("vessel_width_px", "psf_sigma_z", "psf_sigma_x", "scatterer_spacing_px"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("noise_sigma", "blood_amplitude_ratio", "tissue_amplitude"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.vessel_count < 0:
            raise ValueError("vessel_count must be nonnegative")
        if self.psf_shape[0] > d.n_z or self.psf_shape[1] > d.n_x:
            raise ValueError(f"psf_shape {self.psf_shape} exceeds frame {d.frame_shape}")
        if self.vessel_count:
            band = d.n_z / self.vessel_count
            need = self.vessel_width_px + 4
            if band < need:
                raise ValueError(
                    f"{self.vessel_count} vessels of width {self.vessel_width_px} px "
                    f"do not fit in depth {d.n_z}"
                )
            if d.n_x < 4 + self.scatterer_spacing_px:
                raise ValueError(f"lateral size {d.n_x} too small for scatterer spacing")

    @property
    def tissue_amplitude_ref(self) -> float:
        # Blood is scaled against unit tissue RMS even when tissue is switched off.
        return self.tissue_amplitude if self.tissue_amplitude > 0 else 1.0

    def to_mapping(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            out[f.name] = str(value) if f.name == "dims" else value
        return out

    @classmethod
    def from_mapping(cls, mapping) -> "PhantomConfig":
        kwargs = {}
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, value in mapping.items():
            if key not in types:
                raise ValueError(f"unknown phantom key {key!r}")
            if key == "dims":
                kwargs[key] = SequenceDims.parse(value) if isinstance(value, str) else value
            elif key == "psf_shape":
                kwargs[key] = tuple(int(v) for v in str(value).split("x")) if isinstance(value, str) else value
            elif key == "psf_kind":
                kwargs[key] = value
            elif key in ("r_true", "vessel_count", "seed"):
                kwargs[key] = int(value)
            else:
                kwargs[key] = float(value)
        return cls(**kwargs)


@dataclass
class PhantomTruth:
    tissue: CasoratiMatrix
    blood_hi: CasoratiMatrix
    psf: PsfKernel
    noise_sigma: float
    seed: int
    r_true: int = 0

    @property
    def dims(self) -> SequenceDims:
        return self.tissue.dims

    def blood_support(self) -> np.ndarray:
        return self.blood_hi.data != 0

    def blurred_blood(self) -> CasoratiMatrix:
        op = CirculantConvolution(self.psf, self.dims.frame_shape)
        return CasoratiMatrix(op.forward(np.array(self.blood_hi.data)), self.dims)

    def vessel_mask(self, dilate: int = 0) -> np.ndarray:
        """Pixels visited by any scatterer, optionally dilated by a square of radius ``dilate``."""
        d = self.dims
        mask = self.blood_support().any(axis=1).reshape(d.frame_shape, order="F")
        if dilate > 0:
            from scipy.ndimage import binary_dilation

            mask = binary_dilation(mask, np.ones((2 * dilate + 1,) * 2, dtype=bool))
        return mask


def _make_psf(cfg: PhantomConfig) -> PsfKernel:
    if cfg.psf_kind == "delta":
        return PsfKernel.delta(cfg.psf_shape)
    if cfg.psf_kind == "gaussian":
        return gaussian_kernel(cfg.psf_shape, cfg.psf_sigma_z, cfg.psf_sigma_x)
    kz, kx = cfg.psf_shape
    z = (np.arange(kz) - kz // 2)[:, None]
    x = (np.arange(kx) - kx // 2)[None, :]
    th = np.deg2rad(cfg.psf_angle_deg)
    a = np.cos(th) * z + np.sin(th) * x
    b = -np.sin(th) * z + np.cos(th) * x
    k = np.exp(-0.5 * (a / cfg.psf_sigma_z) ** 2 - 0.5 * (b / cfg.psf_sigma_x) ** 2)
    return PsfKernel((k / np.linalg.norm(k)).astype(np.complex128))


def _temporal_factors(rng, r, n_t, drift):
    """Unit-RMS low-pass random walks; the first factor is static plus drift."""
    out = np.empty((r, n_t), dtype=np.complex128)
    cutoff = max(drift, 1e-3)
    sos = butter(2, cutoff, output="sos") if cutoff < 1 else None
    for i in range(r):
        walk = np.cumsum(rng.standard_normal(n_t) + 1j * rng.standard_normal(n_t))
        if sos is not None and n_t > 12:
            walk = sosfiltfilt(sos, walk.real) + 1j * sosfiltfilt(sos, walk.imag)
        walk = walk - walk.mean()
        if i == 0:
            walk = 1.0 + 0.1 * walk / max(np.sqrt(np.mean(np.abs(walk) ** 2)), 1e-12)
        out[i] = walk / max(np.sqrt(np.mean(np.abs(walk) ** 2)), 1e-12)
    return out


def _tissue(rng, cfg: PhantomConfig):
    d = cfg.dims
    r = cfg.r_true
    if r == 0 or cfg.tissue_amplitude == 0:
        return np.zeros(d.casorati_shape, dtype=np.complex128)
    weights = np.logspace(0, -0.5, r) if r > 1 else np.ones(1)
    spatial = (rng.standard_normal((d.n_pixels, r)) + 1j * rng.standard_normal((d.n_pixels, r))) / np.sqrt(2)
    temporal = _temporal_factors(rng, r, d.n_t, cfg.tissue_drift)
    # orthonormal factors make the tissue singular values proportional to the weights
    q_s, _ = np.linalg.qr(spatial)
    q_t, _ = np.linalg.qr(temporal.T)
    T = (q_s * weights) @ q_t.T
    T *= cfg.tissue_amplitude / np.sqrt(np.mean(np.abs(T) ** 2))
    return T


def _vessel_paths(rng, cfg: PhantomConfig):
    """Each path is (z(s), x(s)) sampled along arc-length-ish parameter s = x."""
    d = cfg.dims
    band = d.n_z / max(cfg.vessel_count, 1)
    margin = 2
    paths = []
    for j in range(cfg.vessel_count):
        zc = (j + 0.5) * band
        amp = max(0.0, min(band / 2 - cfg.vessel_width_px / 2 - margin, band / 6))
        period = rng.uniform(0.6, 1.2) * d.n_x
        phase = rng.uniform(0, 2 * np.pi)
        direction = 1 if rng.random() < 0.5 else -1
        paths.append((zc, amp, period, phase, direction))
    return paths


def _blood(rng, cfg: PhantomConfig, psf_peak=1.0):
    d = cfg.dims
    X = np.zeros((d.n_z, d.n_x, d.n_t), dtype=np.complex128)
    if cfg.vessel_count == 0 or cfg.blood_amplitude_ratio == 0:
        return X
    margin = 2
    x_lo, x_hi = margin, d.n_x - 1 - margin
    length = x_hi - x_lo
    t = np.arange(d.n_t)
    # Ratio is measured on the blurred signal: one scatterer's peak after the PSF.
    amp = cfg.blood_amplitude_ratio * cfg.tissue_amplitude_ref / psf_peak
    f_d = 2.0 * cfg.flow_speed_px_per_frame / _WAVELENGTH_PX
    for zc, a, period, phase, direction in _vessel_paths(rng, cfg):
        n_sc = max(1, int(length // cfg.scatterer_spacing_px))
        s0 = np.arange(n_sc) * (length / n_sc)
        offsets = rng.uniform(-0.5, 0.5, n_sc) * (cfg.vessel_width_px - 1)
        phases0 = rng.uniform(0, 2 * np.pi, n_sc)
        for k in range(n_sc):
            s = (s0[k] + direction * cfg.flow_speed_px_per_frame * t) % length
            xs = x_lo + s
            zs = zc + a * np.sin(2 * np.pi * xs / period + phase) + offsets[k]
            zi = np.clip(np.rint(zs).astype(int), 0, d.n_z - 1)
            xi = np.clip(np.rint(xs).astype(int), 0, d.n_x - 1)
            X[zi, xi, t] += amp * np.exp(1j * (phases0[k] + 2 * np.pi * direction * f_d * t))
    return X


def generate(cfg: PhantomConfig | None = None):
    """Return ``(S, truth)`` for ``cfg``; deterministic given ``cfg.seed``."""
    cfg = cfg or PhantomConfig()
    rng = np.random.default_rng(cfg.seed)
    d = cfg.dims
    tissue = _tissue(rng, cfg)
    psf = _make_psf(cfg)
    blood_cube = _blood(rng, cfg, float(np.abs(psf.kernel).max()))
    blood_hi = to_casorati(blood_cube)
    op = CirculantConvolution(psf, d.frame_shape)
    blurred = op.forward(np.array(blood_hi.data))
    noise = cfg.noise_sigma / np.sqrt(2) * (
        rng.standard_normal(d.casorati_shape) + 1j * rng.standard_normal(d.casorati_shape)
    )
    S = CasoratiMatrix(tissue + blurred + noise, d)
    truth = PhantomTruth(
        tissue=CasoratiMatrix(tissue, d),
        blood_hi=blood_hi,
        psf=psf,
        noise_sigma=cfg.noise_sigma,
        seed=cfg.seed,
        r_true=cfg.r_true,
    )
    return S, truth


def psf_as_sequence(psf: PsfKernel) -> CasoratiMatrix:
    return to_casorati(np.asarray(psf.kernel)[:, :, None])


def sequence_as_psf(m: CasoratiMatrix) -> PsfKernel:
    if m.dims.n_t != 1:
        raise ValueError(f"PSF file must hold a single frame, got {m.dims.n_t}")
    return PsfKernel(np.array(m.frame(0)))


def save_phantom(directory, S, truth: PhantomTruth, cfg: PhantomConfig) -> dict:
    os.makedirs(directory, exist_ok=True)
    paths = {
        "s": os.path.join(directory, "s.ufd"),
        "tissue": os.path.join(directory, "tissue.ufd"),
        "blood": os.path.join(directory, "blood.ufd"),
        "psf": os.path.join(directory, "psf.ufd"),
        "config": os.path.join(directory, "config.txt"),
    }
    save_sequence(paths["s"], S)
    save_sequence(paths["tissue"], truth.tissue)
    save_sequence(paths["blood"], truth.blood_hi)
    save_sequence(paths["psf"], psf_as_sequence(truth.psf))
    write_kv(paths["config"], cfg.to_mapping(), header="ufdoppler phantom configuration")
    return paths


def load_truth(directory) -> PhantomTruth:
    """Read the truth files written by :func:`save_phantom` (float32 precision)."""
    cfg = PhantomConfig.from_mapping(read_kv(os.path.join(directory, "config.txt")))
    return PhantomTruth(
        tissue=load_sequence(os.path.join(directory, "tissue.ufd")),
        blood_hi=load_sequence(os.path.join(directory, "blood.ufd")),
        psf=sequence_as_psf(load_sequence(os.path.join(directory, "psf.ufd"))),
        noise_sigma=cfg.noise_sigma,
        seed=cfg.seed,
        r_true=cfg.r_true,
    )


__all__ = [
    "PhantomConfig",
    "PhantomTruth",
    "generate",
    "save_phantom",
    "load_truth",
    "psf_as_sequence",
    "sequence_as_psf",
]
