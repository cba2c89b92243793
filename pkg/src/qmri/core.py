"""Shared value types, seeded randomness, and the QAR1 array container.

Everything downstream works on plain numpy arrays; the dataclasses here are
thin validated wrappers used at module boundaries. All floating-point work is
64-bit by default (gradient checks depend on it); 32-bit is opt-in where a
config exposes it.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ArrayFormatError",
    "NumericFailure",
    "MGREImage",
    "QMaps",
    "RngStream",
    "write_array",
    "read_array",
    "atomic_write_bytes",
]


class ArrayFormatError(ValueError):
    """Malformed QAR1 file or an array the container cannot hold."""


class NumericFailure(RuntimeError):
    """An iterative solver or training run went numerically bad."""


# ---------------------------------------------------------------------------
# QAR1 array container
#
# Layout (little-endian throughout):
#   bytes 0-3   magic "QAR1"
#   byte  4     dtype code: 1=f32, 2=f64, 3=complex64, 4=complex128
#   byte  5     ndim (1..4)
#   bytes 6-7   zero padding
#   ndim x u64  dims
#   payload     row-major; complex stored as interleaved (re, im)
# ---------------------------------------------------------------------------

_MAGIC = b"QAR1"
_DTYPE_OF_CODE = {
    1: np.dtype("<f4"),
    2: np.dtype("<f8"),
    3: np.dtype("<c8"),
    4: np.dtype("<c16"),
}
_CODE_OF_KIND = {
    np.dtype(np.float32): 1,
    np.dtype(np.float64): 2,
    np.dtype(np.complex64): 3,
    np.dtype(np.complex128): 4,
}


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write bytes to `path` via a temp file + rename in the same directory."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_array(path, a) -> None:
    """Serialize a real or complex grid to a QAR1 file (bit-exact round trip)."""
    a = np.asarray(a)
    code = _CODE_OF_KIND.get(a.dtype.newbyteorder("="))
    if code is None:
        raise ArrayFormatError(f"unsupported dtype {a.dtype} (f32/f64/c64/c128 only)")
    if not 1 <= a.ndim <= 4:
        raise ArrayFormatError(f"unsupported shape {a.shape}: ndim must be 1..4")
    header = _MAGIC + struct.pack("<BBxx", code, a.ndim)
    header += struct.pack(f"<{a.ndim}Q", *a.shape)
    payload = np.ascontiguousarray(a, dtype=_DTYPE_OF_CODE[code]).tobytes()
    atomic_write_bytes(path, header + payload)


def read_array(path) -> np.ndarray:
    """Read a QAR1 file back into the grid it was written from."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != _MAGIC:
        raise ArrayFormatError(f"{path}: bad magic {raw[:4]!r}")
    code, ndim = raw[4], raw[5]
    if code not in _DTYPE_OF_CODE:
        raise ArrayFormatError(f"{path}: unknown dtype code {code}")
    if not 1 <= ndim <= 4:
        raise ArrayFormatError(f"{path}: bad ndim {ndim}")
    if len(raw) < 8 + 8 * ndim:
        raise ArrayFormatError(f"{path}: truncated header")
    dims = struct.unpack(f"<{ndim}Q", raw[8 : 8 + 8 * ndim])
    dtype = _DTYPE_OF_CODE[code]
    nbytes = int(np.prod(dims)) * dtype.itemsize
    payload = raw[8 + 8 * ndim :]
    if len(payload) != nbytes:
        raise ArrayFormatError(
            f"{path}: truncated payload ({len(payload)} bytes, expected {nbytes})"
        )
    return np.frombuffer(payload, dtype=dtype).reshape(dims).copy()


# ---------------------------------------------------------------------------
# Domain value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MGREImage:
    """Complex multi-echo image volume, shape (echoes, H, W), plus echo times [s]."""

    data: np.ndarray
    echo_times: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        times = np.asarray(self.echo_times, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"data must be (echoes, H, W), got {data.shape}")
        if not np.iscomplexobj(data):
            data = data.astype(np.complex128)
        if times.ndim != 1 or times.shape[0] != data.shape[0]:
            raise ValueError("echo_times length must match the echo dimension")
        if times.shape[0] < 1 or times[0] <= 0 or np.any(np.diff(times) <= 0):
            raise ValueError("echo_times must be positive and strictly increasing")
        if not np.all(np.isfinite(data.view(np.float64))):
            raise ValueError("image contains non-finite entries")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "echo_times", times)

    @property
    def n_echoes(self) -> int:
        return self.data.shape[0]

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.data.shape[1], self.data.shape[2]


@dataclass(frozen=True)
class QMaps:
    """Voxel-wise tissue parameters on the image grid.

    x0      signal intensity at t=0 (a.u., >= 0)
    r2s     effective transverse decay rate (1/s)
    omega   local off-resonance frequency (rad/s)
    f_of_t  complex field-inhomogeneity attenuation per echo, |f| <= 1
    rem     region extraction mask; x0 and r2s are zero outside it
    """

    x0: np.ndarray
    r2s: np.ndarray
    omega: np.ndarray
    f_of_t: np.ndarray
    rem: np.ndarray

    def __post_init__(self):
        x0 = np.asarray(self.x0, dtype=np.float64)
        r2s = np.asarray(self.r2s, dtype=np.float64)
        omega = np.asarray(self.omega, dtype=np.float64)
        f = np.asarray(self.f_of_t, dtype=np.complex128)
        rem = np.asarray(self.rem, dtype=bool)
        if not (x0.shape == r2s.shape == omega.shape == rem.shape):
            raise ValueError("map shapes disagree")
        if f.ndim != 3 or f.shape[1:] != x0.shape:
            raise ValueError("f_of_t must be (echoes, H, W) on the map grid")
        if np.any(np.abs(f) > 1.0 + 1e-9):
            raise ValueError("|f_of_t| must be <= 1 everywhere")
        if np.any(x0 < 0):
            raise ValueError("x0 must be nonnegative")
        out = ~rem
        if np.any(x0[out] != 0) or np.any(r2s[out] != 0):
            raise ValueError("x0 and r2s must be zero outside the mask")
        for name, arr in (("x0", x0), ("r2s", r2s), ("omega", omega)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "r2s", r2s)
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "f_of_t", f)
        object.__setattr__(self, "rem", rem)

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.x0.shape


_MIX = 0x9E3779B97F4A7C15  # 64-bit golden-ratio constant for stream derivation


@dataclass(eq=False)
class RngStream:
    """Seeded random stream; equal (seed, stream_id) gives equal draw sequences.

    The stream is the only stateful object in the package: successive draws
    advance it. Derive independent child streams with `child` instead of
    sharing one stream across concurrent workers.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(
            entropy=int(self.seed) & (2**64 - 1),
            spawn_key=(int(self.stream_id) & (2**64 - 1),),
        )
        self._gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, k: int) -> "RngStream":
        """Independent stream derived from (seed, stream_id, k); stateless."""
        derived = (int(self.stream_id) * _MIX + int(k) + 1) & (2**64 - 1)
        return RngStream(self.seed, derived)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    # thin delegation; keeps call sites short
    def uniform(self, lo=0.0, hi=1.0, size=None):
        return self._gen.uniform(lo, hi, size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def integers(self, lo, hi, size=None):
        return self._gen.integers(lo, hi, size=size)

    def choice(self, a, size=None, replace=True):
        return self._gen.choice(a, size=size, replace=replace)

    def permutation(self, n):
        return self._gen.permutation(n)

    def complex_normal(self, size=None):
        return self._gen.standard_normal(size) + 1j * self._gen.standard_normal(size)
