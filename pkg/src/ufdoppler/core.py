"""Casorati data model, reshaping helpers and the UFD1 sequence file format.

A sequence of ``n_t`` beamformed IQ frames of ``n_z`` depth by ``n_x``
lateral samples is stored as a ``(n_z * n_x, n_t)`` complex matrix whose
column ``t`` is frame ``t`` flattened depth-fastest::

    casorati[x * n_z + z, t] == cube[z, x, t]
"""

from __future__ import annotations

import os
import struct
import sys
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    BadMagicError,
    DimensionError,
    DimensionOverflowError,
    TrailingDataError,
    TruncatedPayloadError,
    UFDFormatError,
)

MAGIC = b"UFD1"
_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class SequenceDims:
    n_z: int
    n_x: int
    n_t: int

    def __post_init__(self):
        for name in ("n_z", "n_x", "n_t"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise DimensionError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.n_pixels * self.n_t > sys.maxsize // 16:
            raise DimensionError(f"sequence {self} too large to address")

    @property
    def n_pixels(self) -> int:
        return self.n_z * self.n_x

    @property
    def frame_shape(self) -> tuple[int, int]:
        return (self.n_z, self.n_x)

    @property
    def casorati_shape(self) -> tuple[int, int]:
        return (self.n_pixels, self.n_t)

    @property
    def size(self) -> int:
        return self.n_pixels * self.n_t

    def __str__(self):
        return f"{self.n_z}x{self.n_x}x{self.n_t}"

    @classmethod
    def parse(cls, text: str) -> "SequenceDims":
        """Parse ``"64x64x200"``."""
        parts = text.lower().split("x")
        if len(parts) != 3:
            raise DimensionError(f"expected NZxNXxNT, got {text!r}")
        try:
            values = [int(p) for p in parts]
        except ValueError:
            raise DimensionError(f"expected integer dims, got {text!r}") from None
        return cls(*values)


class CasoratiMatrix:
    """Immutable complex Casorati matrix with its sequence dims.

    Parameters
    ----------
    data : array_like, shape (n_z * n_x, n_t)
        Complex samples; copied to a read-only complex128 array.
    dims : SequenceDims or tuple of int
        ``(n_z, n_x, n_t)``.
    """

    __slots__ = ("_data", "_dims")

    def __init__(self, data, dims):
        if not isinstance(dims, SequenceDims):
            dims = SequenceDims(*dims)
        arr = np.array(data, dtype=np.complex128, copy=True)
        if arr.shape != dims.casorati_shape:
            raise DimensionError(
                f"Casorati data of shape {arr.shape} does not match dims {dims} "
                f"(expected {dims.casorati_shape})"
            )
        arr.flags.writeable = False
        self._data = arr
        self._dims = dims

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def dims(self) -> SequenceDims:
        return self._dims

    @property
    def shape(self):
        return self._data.shape

    def frame(self, t: int) -> np.ndarray:
        return self._data[:, t].reshape(self._dims.frame_shape, order="F")

    def to_cube(self) -> np.ndarray:
        return to_cube(self)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._data if copy is not True else self._data.copy()
        return self._data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, CasoratiMatrix):
            return NotImplemented
        return self._dims == other._dims and np.array_equal(self._data, other._data)

    __hash__ = None

    def __repr__(self):
        return f"CasoratiMatrix(dims={self._dims})"


def to_casorati(cube) -> CasoratiMatrix:
    """Flatten a ``(n_z, n_x, n_t)`` cube into a Casorati matrix."""
    try:
        arr = np.asarray(cube, dtype=np.complex128)
    except ValueError as exc:
        raise DimensionError(f"ragged cube: {exc}") from None
    if arr.ndim != 3:
        raise DimensionError(f"cube must be 3D (n_z, n_x, n_t), got shape {arr.shape}")
    if arr.size == 0:
        raise DimensionError(f"cube must be non-empty, got shape {arr.shape}")
    dims = SequenceDims(*arr.shape)
    return CasoratiMatrix(arr.reshape(dims.casorati_shape, order="F"), dims)


def to_cube(m: CasoratiMatrix) -> np.ndarray:
    """Inverse of :func:`to_casorati`; returns a new writable array."""
    d = m.dims
    return np.array(m.data.reshape((d.n_z, d.n_x, d.n_t), order="F"))


def temporal_average(m: CasoratiMatrix) -> np.ndarray:
    """Per-pixel complex mean over frames, returned as an ``(n_z, n_x)`` frame."""
    d = m.dims
    return m.data.mean(axis=1).reshape(d.frame_shape, order="F")


def as_casorati(obj, dims=None) -> CasoratiMatrix:
    """Coerce a cube, a Casorati ndarray plus dims, or a CasoratiMatrix."""
    if isinstance(obj, CasoratiMatrix):
        if dims is not None and SequenceDims(*dims) != obj.dims:
            raise DimensionError(f"dims {dims} do not match {obj.dims}")
        return obj
    arr = np.asarray(obj)
    if arr.ndim == 3:
        return to_casorati(arr)
    if arr.ndim == 2:
        if dims is None:
            raise DimensionError("a 2D Casorati array needs explicit dims")
        return CasoratiMatrix(arr, dims)
    raise DimensionError(f"expected 2D or 3D array, got shape {arr.shape}")


def save_sequence(path, m: CasoratiMatrix) -> None:
    """Write ``m`` as a UFD1 file (complex values rounded to complex64)."""
    d = m.dims
    header = _HEADER.pack(MAGIC, d.n_z, d.n_x, d.n_t)
    payload = np.ascontiguousarray(m.data.reshape(-1, order="F"), dtype="<c8")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload.tobytes())


def load_sequence(path) -> CasoratiMatrix:
    """Read a UFD1 file written by :func:`save_sequence`."""
    with open(path, "rb") as fh:
        raw = fh.read()
    return decode_sequence(raw, source=os.fspath(path))


def decode_sequence(raw: bytes, source="<bytes>") -> CasoratiMatrix:
    if len(raw) < _HEADER.size:
        if len(raw) >= 4 and raw[:4] != MAGIC:
            raise BadMagicError(f"{source}: bad magic {raw[:4]!r}")
        raise TruncatedPayloadError(f"{source}: header truncated ({len(raw)} bytes)")
    magic, n_z, n_x, n_t = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}")
    if min(n_z, n_x, n_t) < 1:
        raise UFDFormatError(f"{source}: zero dimension in header {n_z}x{n_x}x{n_t}")
    count = n_z * n_x * n_t
    if count > sys.maxsize // 16:
        raise DimensionOverflowError(f"{source}: dims {n_z}x{n_x}x{n_t} overflow addressable size")
    expected = count * 8
    have = len(raw) - _HEADER.size
    if have < expected:
        raise TruncatedPayloadError(
            f"{source}: header declares {count} complex values, payload holds {have // 8}"
        )
    if have > expected:
        raise TrailingDataError(f"{source}: {have - expected} bytes after payload")
    flat = np.frombuffer(raw, dtype="<c8", count=count, offset=_HEADER.size)
    dims = SequenceDims(n_z, n_x, n_t)
    return CasoratiMatrix(flat.reshape(dims.casorati_shape, order="F"), dims)
