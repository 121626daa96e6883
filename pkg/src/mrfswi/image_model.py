"""Value types for complex/real images and histograms, plus the MCF file format.

MCF layout (little-endian)::

    0   4s  magic b"MCF1"
    4   u32 version (1)
    8   u32 channels
    12  u32 height
    16  u32 width
    20  u8  dtype (0 = complex, interleaved re/im float32; 1 = real float32)
    21  3x  zero padding
    24  ... samples, channel-major then row-major

Arrays are held as float64/complex128 in memory; files carry float32.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

MAGIC = b"MCF1"
VERSION = 1
DTYPE_COMPLEX = 0
DTYPE_REAL = 1
_HEADER = struct.Struct("<4sIIIIB3x")


class MCFError(Exception):
    """Base class for MCF read/write failures."""


class BadMagicError(MCFError):
    pass


class TruncatedFileError(MCFError):
    pass


class UnknownDtypeError(MCFError):
    pass


class StorageError(MCFError):
    """The file system refused a read or write."""


def _check_2d(data: np.ndarray, kind: str) -> None:
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise ValueError(f"{kind} must be a non-empty 2D array, got shape {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{kind} contains non-finite samples")


@dataclass(frozen=True, eq=False)
class ComplexImage:
    """One complex-valued 2D slice (e.g. a single coil image)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.complex128)
        _check_2d(arr, "ComplexImage")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, ComplexImage):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class RealField:
    """Real-valued 2D field: phase (radians), magnitude, thresholds, posteriors."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float64)
        _check_2d(arr, "RealField")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, RealField):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class MultiChannelImage:
    """Stack of same-sized complex channel images, shape (channels, height, width)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.complex128)
        if arr.ndim != 3 or 0 in arr.shape:
            raise ValueError(
                f"MultiChannelImage needs shape (channels, height, width) with all "
                f"dimensions >= 1, got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise ValueError("MultiChannelImage contains non-finite samples")
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @classmethod
    def from_images(cls, images: Sequence[ComplexImage | np.ndarray]) -> "MultiChannelImage":
        if len(images) == 0:
            raise ValueError("at least one channel is required")
        arrays = [np.asarray(im) for im in images]
        if len({a.shape for a in arrays}) != 1:
            raise ValueError("all channels must share the same height and width")
        return cls(np.stack(arrays))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def images(self) -> list[ComplexImage]:
        return [ComplexImage(c) for c in self.data]

    def __len__(self) -> int:
        return self.channels

    def __getitem__(self, j: int) -> ComplexImage:
        return ComplexImage(self.data[j])

    def __iter__(self) -> Iterator[ComplexImage]:
        return iter(self.images)

    def __array__(self, dtype=None, copy=None):
        return self.data if dtype is None else self.data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, MultiChannelImage):
            return NotImplemented
        return self.data.shape == other.data.shape and np.array_equal(self.data, other.data)


def magnitude_phase(img: ComplexImage | np.ndarray) -> tuple[RealField, RealField]:
    """Split a complex image into modulus and principal angle in (-pi, pi].

    The zero sample gets phase 0.
    """
    z = np.asarray(img, dtype=np.complex128)
    mag = np.abs(z)
    phase = np.angle(z)
    # np.angle returns -pi for negative reals with a -0.0 imaginary part
    phase[phase <= -np.pi] = np.pi
    phase[mag == 0] = 0.0
    return RealField(mag), RealField(phase)


@dataclass(frozen=True, eq=False)
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        counts = np.asarray(self.counts, dtype=np.float64)
        if edges.ndim != 1 or counts.ndim != 1 or len(edges) != len(counts) + 1:
            raise ValueError("counts must have exactly one fewer entry than bin_edges")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin_edges must be strictly increasing")
        if np.any(counts < 0) or counts.sum() <= 0:
            raise ValueError("counts must be non-negative with positive total")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[:-1] + self.bin_edges[1:])

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    @property
    def normalized_density(self) -> np.ndarray:
        return self.counts / (self.total * self.widths)

    @property
    def n_bins(self) -> int:
        return len(self.counts)


def build_histogram(
    values, n_bins: int = 256, support: tuple[float, float] = (-np.pi, np.pi)
) -> Histogram:
    """Histogram of `values` with out-of-support samples clipped into the edge bins."""
    lo, hi = float(support[0]), float(support[1])
    if n_bins < 8:
        raise ValueError(f"n_bins must be >= 8, got {n_bins}")
    if not lo < hi:
        raise ValueError(f"support must satisfy lo < hi, got ({lo}, {hi})")
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("cannot build a histogram from an empty sample")
    edges = np.linspace(lo, hi, n_bins + 1)
    counts, _ = np.histogram(np.clip(v, lo, hi), bins=edges)
    return Histogram(edges, counts)


def _atomic_write(path: Path, payload: bytes) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_bytes_atomic(path: str | os.PathLike, payload: bytes) -> None:
    """Write via a temporary sibling file and rename; errors name the path."""
    try:
        _atomic_write(Path(path), payload)
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc.strerror or exc}") from exc


def _encode(data: np.ndarray, dtype_code: int) -> bytes:
    channels, height, width = data.shape
    header = _HEADER.pack(MAGIC, VERSION, channels, height, width, dtype_code)
    if dtype_code == DTYPE_COMPLEX:
        body = data.astype(np.complex64).astype("<c8").tobytes()
    else:
        body = data.astype("<f4").tobytes()
    return header + body


def save_mcf(img: MultiChannelImage | ComplexImage | RealField, path: str | os.PathLike) -> None:
    """Write an image to `path` in MCF format.

    Complex inputs use dtype 0; a RealField is stored as a 1-channel dtype 1 file.
    Samples are rounded to float32.
    """
    if isinstance(img, RealField):
        payload = _encode(img.data[None], DTYPE_REAL)
    elif isinstance(img, ComplexImage):
        payload = _encode(img.data[None], DTYPE_COMPLEX)
    elif isinstance(img, MultiChannelImage):
        payload = _encode(img.data, DTYPE_COMPLEX)
    else:
        raise TypeError(f"cannot save object of type {type(img).__name__} as MCF")
    write_bytes_atomic(path, payload)


def read_mcf(path: str | os.PathLike) -> tuple[int, np.ndarray]:
    """Raw MCF contents: (dtype code, little-endian sample array of shape (C, H, W))."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not an MCF file (magic {raw[:4]!r})")
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: header truncated ({len(raw)} bytes)")
    _, version, channels, height, width, dtype_code = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise MCFError(f"{path}: unsupported MCF version {version}")
    if dtype_code not in (DTYPE_COMPLEX, DTYPE_REAL):
        raise UnknownDtypeError(f"{path}: unknown dtype code {dtype_code}")
    if channels < 1 or height < 1 or width < 1:
        raise MCFError(f"{path}: empty dimensions {channels}x{height}x{width}")
    itemsize = 8 if dtype_code == DTYPE_COMPLEX else 4
    n_bytes = channels * height * width * itemsize
    body = raw[_HEADER.size:]
    if len(body) < n_bytes:
        raise TruncatedFileError(
            f"{path}: header declares {n_bytes} data bytes, file holds {len(body)}"
        )
    fmt = "<c8" if dtype_code == DTYPE_COMPLEX else "<f4"
    data = np.frombuffer(body[:n_bytes], dtype=fmt).reshape(channels, height, width)
    if not np.all(np.isfinite(data)):
        raise MCFError(f"{path}: contains non-finite samples")
    return dtype_code, data


def load_mcf(path: str | os.PathLike) -> MultiChannelImage:
    """Read an MCF file as a MultiChannelImage (real files load with zero imaginary part)."""
    _, data = read_mcf(path)
    return MultiChannelImage(data.astype(np.complex128))


def load_real_field(path: str | os.PathLike) -> RealField:
    """Read a 1-channel real MCF file."""
    dtype_code, data = read_mcf(path)
    if dtype_code != DTYPE_REAL or data.shape[0] != 1:
        raise MCFError(f"{path}: expected a 1-channel real field")
    return RealField(data[0].astype(np.float64))


def quantize_float32(z: np.ndarray) -> np.ndarray:
    """Round samples to the precision MCF stores, keeping a 64-bit dtype."""
    z = np.asarray(z)
    if np.iscomplexobj(z):
        return z.astype(np.complex64).astype(np.complex128)
    return z.astype(np.float32).astype(np.float64)
