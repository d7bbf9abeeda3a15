"""Shared value types, deterministic RNG, and the binary tensor file format.

Everything downstream (forward model, sampler, CLI, trainer boundary) moves
data through the types in this module. Arrays are 64-bit (complex128 for
complex data) and are frozen after construction so values can be shared
freely across threads.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "ValidationError",
    "TensorIOError",
    "BadMagicError",
    "TruncatedFileError",
    "UnknownDtypeError",
    "RealImage",
    "ComplexImage",
    "CoilSet",
    "SamplingMask",
    "KSpaceData",
    "Rng",
    "tensor_write",
    "tensor_read",
    "read_array",
    "write_array",
]


class ValidationError(ValueError):
    """Raised when inputs violate a documented invariant."""


class TensorIOError(IOError):
    """Base class for tensor-file format errors."""


class BadMagicError(TensorIOError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(TensorIOError):
    """File ends before the declared header/payload is complete."""


class UnknownDtypeError(TensorIOError):
    """File declares a dtype code this implementation does not know."""


def _as_frozen(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, copy=True)
    out.setflags(write=False)
    return out


def _require_finite(data: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise ValidationError(f"{what} contains non-finite entries")


@dataclass(frozen=True)
class RealImage:
    """2-D real-valued image on the reconstruction grid."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValidationError(f"RealImage needs a 2-D array, got shape {data.shape}")
        _require_finite(data, "RealImage")
        object.__setattr__(self, "data", _as_frozen(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class ComplexImage:
    """2-D complex-valued image (individual coil images, zero-filled recons)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.complex128)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValidationError(f"ComplexImage needs a 2-D array, got shape {data.shape}")
        _require_finite(data, "ComplexImage")
        object.__setattr__(self, "data", _as_frozen(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class CoilSet:
    """Stack of C complex coil images of identical shape, C >= 1.

    ``stack`` has shape (C, H, W). Division by the root-sum-of-squares map of
    a CoilSet is always floored (see forward_model.RSS_FLOOR), so the maps
    themselves may vanish pointwise.
    """

    stack: np.ndarray

    def __post_init__(self):
        stack = np.asarray(self.stack, dtype=np.complex128)
        if stack.ndim != 3 or stack.shape[0] < 1:
            raise ValidationError(f"CoilSet needs a (C, H, W) array with C >= 1, got {stack.shape}")
        _require_finite(stack, "CoilSet")
        object.__setattr__(self, "stack", _as_frozen(stack))

    @property
    def num_coils(self) -> int:
        return self.stack.shape[0]

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.stack.shape[1:]

    def coil(self, j: int) -> ComplexImage:
        return ComplexImage(self.stack[j])


@dataclass(frozen=True)
class SamplingMask:
    """Binary k-space selection pattern (True = acquired frequency)."""

    select: np.ndarray

    def __post_init__(self):
        select = np.asarray(self.select)
        if select.dtype != np.bool_:
            if not np.all((select == 0) | (select == 1)):
                raise ValidationError("SamplingMask entries must be binary")
            select = select.astype(bool)
        if select.ndim != 2:
            raise ValidationError(f"SamplingMask needs a 2-D array, got shape {select.shape}")
        if not select.any():
            raise ValidationError("SamplingMask selects no entries")
        object.__setattr__(self, "select", _as_frozen(select))

    @property
    def shape(self) -> tuple[int, int]:
        return self.select.shape

    @property
    def num_selected(self) -> int:
        return int(self.select.sum())

    @property
    def acceleration(self) -> float:
        return self.select.size / self.num_selected


@dataclass(frozen=True)
class KSpaceData:
    """Multi-coil k-space data, zero at every mask-off position."""

    channels: np.ndarray
    mask: SamplingMask

    def __post_init__(self):
        channels = np.asarray(self.channels, dtype=np.complex128)
        if channels.ndim != 3 or channels.shape[0] < 1:
            raise ValidationError(f"KSpaceData needs a (C, H, W) array, got {channels.shape}")
        if channels.shape[1:] != self.mask.shape:
            raise ValidationError(
                f"KSpaceData shape {channels.shape[1:]} does not match mask {self.mask.shape}"
            )
        _require_finite(channels, "KSpaceData")
        if np.any(channels[:, ~self.mask.select] != 0):
            raise ValidationError("KSpaceData has nonzero entries at mask-off positions")
        object.__setattr__(self, "channels", _as_frozen(channels))

    @property
    def num_coils(self) -> int:
        return self.channels.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.shape


class Rng:
    """Deterministic normal-variate stream: Philox(4x64-10) + Box-Muller.

    The counter-based Philox bit generator is keyed with the 64-bit seed; raw
    64-bit words are mapped to uniforms u = 1 - (word >> 11) * 2**-53 in
    (0, 1] and paired through the Box-Muller transform. The stream therefore
    depends only on the seed and the cumulative number of variates drawn,
    identically on every platform.
    """

    def __init__(self, seed: int):
        if not (0 <= int(seed) < 2**64):
            raise ValidationError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self._bits = np.random.Philox(key=self.seed)

    def normal(self, shape=()) -> np.ndarray:
        """Draw standard-normal variates with the given shape."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        raw = self._bits.random_raw(2 * pairs)
        u = (raw >> np.uint64(11)) * (2.0 ** -53)
        u1 = 1.0 - u[:pairs]          # (0, 1]: keeps log() finite
        u2 = u[pairs:]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else z[0]

    def complex_normal(self, shape=()) -> np.ndarray:
        """Complex normals with unit E|z|^2 (two reals of variance 1/2 each)."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        z = self.normal(tuple(shape) + (2,))
        return (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)

    def uniform(self, shape=()) -> np.ndarray:
        """Uniforms in [0, 1) from the same raw stream."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape)) if shape else 1
        raw = self._bits.random_raw(n)
        u = (raw >> np.uint64(11)) * (2.0 ** -53)
        return u.reshape(shape) if shape else u[0]


def normal_draw(rng: Rng, shape) -> np.ndarray:
    """Module-level alias for Rng.normal (the z ~ N(0, I) draws of the sampler)."""
    return rng.normal(shape)


# ---------------------------------------------------------------------------
# "TNSR" binary tensor format
#
#   magic "TNSR" | u32 version=1 | u8 dtype (0=real64, 1=complex128)
#   | u8 ndim | ndim x u64 dims | row-major little-endian payload
#
# complex128 payload is interleaved real/imag float64.
# ---------------------------------------------------------------------------

_MAGIC = b"TNSR"
_VERSION = 1
_DTYPE_REAL = 0
_DTYPE_COMPLEX = 1


def write_array(path, arr: np.ndarray) -> None:
    """Write a real or complex float64 array in the TNSR format."""
    arr = np.asarray(arr)
    if np.iscomplexobj(arr):
        arr = arr.astype(np.complex128, copy=False)
        code = _DTYPE_COMPLEX
    else:
        arr = arr.astype(np.float64, copy=False)
        code = _DTYPE_REAL
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"refusing to write non-finite entries to {path}")
    header = _MAGIC + struct.pack("<IBB", _VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.ascontiguousarray(arr).astype("<c16" if code else "<f8").tobytes()
    Path(path).write_bytes(header + payload)


def tensor_write(path, t) -> None:
    """Write a RealImage / ComplexImage / CoilSet (or bare array) to disk."""
    if isinstance(t, (RealImage, ComplexImage)):
        write_array(path, t.data)
    elif isinstance(t, CoilSet):
        write_array(path, t.stack)
    elif isinstance(t, SamplingMask):
        write_array(path, t.select.astype(np.float64))
    else:
        write_array(path, np.asarray(t))


def read_array(path) -> np.ndarray:
    """Read a TNSR file back into a float64 or complex128 array."""
    blob = Path(path).read_bytes()
    if len(blob) < 4 or blob[:4] != _MAGIC:
        raise BadMagicError(f"{path}: not a TNSR file")
    if len(blob) < 10:
        raise TruncatedFileError(f"{path}: header truncated")
    version, code, ndim = struct.unpack("<IBB", blob[4:10])
    if version != _VERSION:
        raise TensorIOError(f"{path}: unsupported TNSR version {version}")
    if code not in (_DTYPE_REAL, _DTYPE_COMPLEX):
        raise UnknownDtypeError(f"{path}: unknown dtype code {code}")
    dims_end = 10 + 8 * ndim
    if len(blob) < dims_end:
        raise TruncatedFileError(f"{path}: dimension block truncated")
    dims = struct.unpack(f"<{ndim}Q", blob[10:dims_end])
    count = int(np.prod(dims)) if ndim else 1
    itemsize = 16 if code == _DTYPE_COMPLEX else 8
    expected = dims_end + count * itemsize
    if len(blob) < expected:
        raise TruncatedFileError(f"{path}: payload truncated ({len(blob)} < {expected} bytes)")
    dtype = "<c16" if code == _DTYPE_COMPLEX else "<f8"
    flat = np.frombuffer(blob[dims_end:expected], dtype=dtype)
    arr = flat.reshape(dims).astype(np.complex128 if code else np.float64)
    return arr


def tensor_read(path):
    """Read a TNSR file into the matching domain type.

    2-D real -> RealImage, 2-D complex -> ComplexImage, 3-D complex ->
    CoilSet. Other shapes (e.g. a 3-D real training stack) come back as a
    plain array.
    """
    arr = read_array(path)
    if arr.ndim == 2:
        return ComplexImage(arr) if np.iscomplexobj(arr) else RealImage(arr)
    if arr.ndim == 3 and np.iscomplexobj(arr):
        return CoilSet(arr)
    return arr
