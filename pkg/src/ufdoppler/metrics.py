"""Power Doppler images, contrast ratios and scoring against phantom truth."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .core import as_casorati
from .exceptions import DimensionError, EmptySweepError, UndefinedContrastError

DB_FLOOR = -120.0
DEFAULT_WINDOW = (-40.0, 0.0)
DEFAULT_PATCH = (16, 16)
DEFAULT_STRIDE = 8
SUPPORT_THRESHOLD = 0.01


class PowerDopplerImage:
    """Real ``(n_z, n_x)`` image in dB; zero-power pixels sit at ``floor_db``."""

    __slots__ = ("data", "floor_db")

    def __init__(self, data, floor_db: float = DB_FLOOR):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionError(f"Power Doppler image must be 2D, got shape {data.shape}")
        self.data = data
        self.floor_db = float(floor_db)

    @property
    def shape(self):
        return self.data.shape

    def linear_amplitude(self) -> np.ndarray:
        return 10.0 ** (self.data / 20.0)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.data, dtype=dtype)

    def __repr__(self):
        return f"PowerDopplerImage(shape={self.shape}, range=[{self.data.min():.1f}, {self.data.max():.1f}] dB)"


@dataclass(frozen=True)
class PatchRect:
    z0: int
    x0: int
    height: int
    width: int

    def __post_init__(self):
        for name in ("z0", "x0", "height", "width"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"patch {name} must be a nonnegative integer, got {v!r}")
        if self.height < 1 or self.width < 1:
            raise ValueError("patch area must be at least 1")

    @classmethod
    def parse(cls, text: str) -> "PatchRect":
        """Parse ``"z0,x0,height,width"``."""
        parts = [p.strip() for p in str(text).split(",")]
        if len(parts) != 4:
            raise ValueError(f"expected z0,x0,height,width, got {text!r}")
        return cls(*(int(p) for p in parts))

    def check_within(self, shape) -> None:
        nz, nx = shape
        if self.z0 + self.height > nz or self.x0 + self.width > nx:
            raise ValueError(f"patch {self} exceeds image bounds {tuple(shape)}")

    def slices(self):
        return (slice(self.z0, self.z0 + self.height), slice(self.x0, self.x0 + self.width))

    def overlaps(self, other: "PatchRect") -> bool:
        return (
            self.z0 < other.z0 + other.height
            and other.z0 < self.z0 + self.height
            and self.x0 < other.x0 + other.width
            and other.x0 < self.x0 + self.width
        )


def power_doppler(x, floor_db: float = DB_FLOOR) -> PowerDopplerImage:
    """Per-pixel ``10 log10`` of the temporal mean of ``|X|^2``."""
    m = as_casorati(x)
    power = np.mean(np.abs(m.data) ** 2, axis=1).reshape(m.dims.frame_shape, order="F")
    out = np.full(power.shape, floor_db)
    pos = power > 0
    out[pos] = 10.0 * np.log10(power[pos])
    return PowerDopplerImage(out, floor_db)


def _as_image(img):
    return img if isinstance(img, PowerDopplerImage) else PowerDopplerImage(img)


def contrast_ratio(img, r1: PatchRect, r2: PatchRect) -> float:
    """``20 log10(mean_R2 / mean_R1)`` with means of linear amplitude."""
    img = _as_image(img)
    r1.check_within(img.shape)
    r2.check_within(img.shape)
    amp = img.linear_amplitude()
    mu1 = amp[r1.slices()].mean()
    mu2 = amp[r2.slices()].mean()
    if not mu1 > 0:
        raise UndefinedContrastError(f"mean amplitude of reference patch {r1} is zero")
    return float(20.0 * np.log10(mu2 / mu1))


@dataclass(frozen=True)
class SweepEntry:
    z0: int
    x0: int
    cr_db: float


def cr_sweep(img, r1: PatchRect, patch_h: int = DEFAULT_PATCH[0], patch_w: int = DEFAULT_PATCH[1],
             stride: int = DEFAULT_STRIDE, mask=None) -> list[SweepEntry]:
    """CR of every stride-aligned ``patch_h x patch_w`` placement not overlapping ``r1``.

    Placements are visited row-major. When ``mask`` is given, a placement is
    kept only if it contains no ``True`` pixel of the mask, which keeps the
    moving patch in the background.
    """
    img = _as_image(img)
    if stride < 1:
        raise ValueError("stride must be at least 1")
    nz, nx = img.shape
    if patch_h < 1 or patch_w < 1 or patch_h > nz or patch_w > nx:
        raise ValueError(f"patch {patch_h}x{patch_w} does not fit in image {img.shape}")
    r1.check_within(img.shape)
    amp = img.linear_amplitude()
    mu1 = amp[r1.slices()].mean()
    if not mu1 > 0:
        raise UndefinedContrastError(f"mean amplitude of reference patch {r1} is zero")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != img.shape:
            raise DimensionError(f"mask shape {mask.shape} differs from image {img.shape}")
    out = []
    for z0 in range(0, nz - patch_h + 1, stride):
        for x0 in range(0, nx - patch_w + 1, stride):
            r2 = PatchRect(z0, x0, patch_h, patch_w)
            if r2.overlaps(r1):
                continue
            if mask is not None and mask[r2.slices()].any():
                continue
            mu2 = amp[r2.slices()].mean()
            out.append(SweepEntry(z0, x0, float(20.0 * np.log10(mu2 / mu1))))
    if not out:
        raise EmptySweepError("no valid placement for the moving patch")
    return out


def write_sweep_csv(path, entries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["z0", "x0", "cr_db"])
        for e in entries:
            w.writerow([e.z0, e.x0, repr(e.cr_db)])


def median_cr(entries) -> float:
    return float(np.median([e.cr_db for e in entries]))


def window_to_gray(img, db_min: float = DEFAULT_WINDOW[0], db_max: float = DEFAULT_WINDOW[1],
                   relative: bool = True) -> np.ndarray:
    """Map dB values to 8-bit gray, clamping outside ``[db_min, db_max]``.

    With ``relative=True`` the window is measured from the image maximum.
    An image at the floor everywhere renders black.
    """
    img = _as_image(img)
    if not db_max > db_min:
        raise ValueError(f"need db_min < db_max, got [{db_min}, {db_max}]")
    data = img.data
    at_floor = data <= img.floor_db
    ref = 0.0
    if relative:
        live = data[~at_floor]
        ref = float(live.max()) if live.size else 0.0
    scaled = (data - ref - db_min) / (db_max - db_min)
    gray = np.rint(np.clip(scaled, 0.0, 1.0) * 255.0).astype(np.uint8)
    gray[at_floor] = 0
    return gray


def render_pgm(path, img, db_min: float = DEFAULT_WINDOW[0], db_max: float = DEFAULT_WINDOW[1],
               relative: bool = True) -> np.ndarray:
    """Write a binary 8-bit PGM; the window goes in a header comment."""
    gray = window_to_gray(img, db_min, db_max, relative)
    nz, nx = gray.shape
    mode = "relative" if relative else "absolute"
    header = f"P5\n# window_db {db_min!r} {db_max!r} {mode}\n{nx} {nz}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(gray.tobytes())
    return gray


def read_pgm(path) -> tuple[np.ndarray, list[str]]:
    """Read a P5 file written by :func:`render_pgm`; returns pixels and comment lines."""
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens, comments, pos = [], [], 0
    while len(tokens) < 4:
        end = raw.index(b"\n", pos)
        line = raw[pos:end].decode("ascii")
        pos = end + 1
        if line.startswith("#"):
            comments.append(line[1:].strip())
        else:
            tokens.extend(line.split())
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    nx, nz, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGM supported")
    pix = np.frombuffer(raw[pos:pos + nz * nx], dtype=np.uint8).reshape(nz, nx)
    return pix, comments


@dataclass(frozen=True)
class TruthScore:
    tissue_rel_error: float
    blood_rel_error: float
    precision: float
    recall: float
    f1: float
    threshold: float

    def to_mapping(self) -> dict:
        return dict(self.__dict__)


def _rel_error(est, ref) -> float:
    scale = np.linalg.norm(ref)
    diff = np.linalg.norm(est - ref)
    if scale == 0:
        return 0.0 if diff == 0 else float("inf")
    return float(diff / scale)


def support_scores(x, truth_support, rel_threshold: float = SUPPORT_THRESHOLD):
    """Precision, recall and F1 of ``|x| > rel_threshold * max|x|`` against a boolean support."""
    mag = np.abs(np.asarray(x))
    truth_support = np.asarray(truth_support, dtype=bool)
    if mag.shape != truth_support.shape:
        raise DimensionError(f"shape {mag.shape} differs from truth {truth_support.shape}")
    peak = mag.max() if mag.size else 0.0
    thr = float(rel_threshold * peak)
    est = mag > thr if peak > 0 else np.zeros(mag.shape, dtype=bool)
    tp = int(np.count_nonzero(est & truth_support))
    n_est = int(np.count_nonzero(est))
    n_true = int(np.count_nonzero(truth_support))
    precision = tp / n_est if n_est else (1.0 if n_true == 0 else 0.0)
    recall = tp / n_true if n_true else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return precision, recall, f1, thr


def score_against_truth(result, truth, rel_threshold: float = SUPPORT_THRESHOLD) -> TruthScore:
    """Compare a decomposition against phantom ground truth.

    The blood error is measured in the blurred domain, ``H (*) X`` against the
    true blurred blood, so it is meaningful for methods that do not
    deconvolve.
    """
    if result.blood_x.dims != truth.dims:
        raise ValueError(f"result dims {result.blood_x.dims} differ from truth dims {truth.dims}")
    t_err = _rel_error(result.tissue_t.data, truth.tissue.data)
    b_err = _rel_error(result.blurred_blood().data, truth.blurred_blood().data)
    p, r, f1, thr = support_scores(result.blood_x.data, truth.blood_support(), rel_threshold)
    return TruthScore(t_err, b_err, float(p), float(r), float(f1), float(thr))


def vessel_patch(mask, height: int = 4, width: int = DEFAULT_PATCH[1]) -> PatchRect:
    """A ``height x width`` patch covering the most vessel pixels of ``mask``.

    Ties resolve to the first row-major position, so the choice is
    deterministic.
    """
    mask = np.asarray(mask, dtype=float)
    nz, nx = mask.shape
    c = np.zeros((nz + 1, nx + 1))
    c[1:, 1:] = mask.cumsum(0).cumsum(1)
    counts = c[height:, width:] - c[:-height, width:] - c[height:, :-width] + c[:-height, :-width]
    z0, x0 = np.unravel_index(int(np.argmax(counts)), counts.shape)
    return PatchRect(int(z0), int(x0), height, width)


__all__ = [
    "DB_FLOOR",
    "PatchRect",
    "PowerDopplerImage",
    "SweepEntry",
    "TruthScore",
    "contrast_ratio",
    "cr_sweep",
    "median_cr",
    "power_doppler",
    "read_pgm",
    "render_pgm",
    "score_against_truth",
    "support_scores",
    "vessel_patch",
    "window_to_gray",
    "write_sweep_csv",
]
