"""Rank-4 float64 arrays, seeded randomness and the ``.bt`` file format.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 and shape
``(N, C, H, W)``; the helpers here validate that contract rather than
wrapping the array in a new type.  1D signals use shape ``(1, 1, 1, n)``.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import BinaryIO, Optional, Sequence, Union

import numpy as np

from .errors import ConfigError, CorruptFileError, NonFiniteError, ShapeError, VersionError

BT_MAGIC = b"BTEN"
BT_VERSION = 1
_BT_HEADER = struct.Struct("<4sB4Q")

Tensor = np.ndarray


def as_tensor(data, shape: Optional[Sequence[int]] = None) -> Tensor:
    """Return a fresh C-contiguous float64 rank-4 copy of ``data``.

    A 1D input without ``shape`` becomes ``(1, 1, 1, n)``.
    """
    arr = np.array(data, dtype=np.float64, copy=True, order="C")
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if arr.size != int(np.prod(shape)):
            raise ShapeError(f"cannot view {arr.size} values as shape {shape}")
        arr = arr.reshape(shape)
    elif arr.ndim == 1:
        arr = arr.reshape(1, 1, 1, -1)
    if arr.ndim != 4:
        raise ShapeError(f"tensors are rank 4, got shape {arr.shape}")
    return arr


def zeros(shape: Sequence[int]) -> Tensor:
    return np.zeros(tuple(shape), dtype=np.float64)


def check_finite(x: Tensor, what: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return x


def flat_index(shape: Sequence[int], n: int, c: int, h: int, w: int) -> int:
    _, C, H, W = shape
    return ((n * C + c) * H + h) * W + w


# -- elementwise ------------------------------------------------------------

_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def elementwise(op: str, a: Tensor, b: Union[Tensor, float, None] = None) -> Tensor:
    """Apply ``op`` per element.

    ``op`` is one of ``add``, ``sub``, ``mul`` (tensor ``b`` of equal shape),
    ``scale`` (scalar ``b``) or ``relu`` (no ``b``).
    """
    a = np.asarray(a, dtype=np.float64)
    if op == "relu":
        out = np.maximum(a, 0.0)
    elif op == "scale":
        if b is None or np.ndim(b) != 0:
            raise ShapeError("scale needs a scalar factor")
        out = a * float(b)
    elif op in _BINARY:
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
        out = _BINARY[op](a, b)
    else:
        raise ConfigError(f"unknown elementwise op {op!r}")
    return check_finite(out, f"{op} result")


# -- randomness -------------------------------------------------------------

_MASK64 = (1 << 64) - 1


class Rng:
    """Counter-based generator keyed by ``(seed, stream)``.

    Backed by numpy's Philox bit generator, whose output depends only on the
    128-bit key and the counter, so ``Rng(s, i)`` yields the same stream on
    every platform and independent streams can be handed to parallel jobs.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream = int(stream) & _MASK64
        key = (self.stream << 64) | self.seed
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def spawn(self, stream: int) -> "Rng":
        """Independent generator for sub-stream ``stream`` of this seed."""
        return Rng(self.seed, derive_stream(self.stream, stream))

    def random(self, size) -> np.ndarray:
        return self._gen.random(size)

    def integers(self, lo: int, hi: int, size=None):
        """Uniform integers in ``[lo, hi]`` (inclusive)."""
        return self._gen.integers(lo, hi, size=size, endpoint=True)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int) -> int:
        return int(self._gen.integers(0, n))


def derive_stream(base: int, index: int) -> int:
    """Mix ``index`` into ``base`` (splitmix64 finalizer)."""
    z = (int(base) * 0x9E3779B97F4A7C15 + int(index) + 1) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def uniform_init(rng: Rng, shape: Sequence[int], lo: float, hi: float) -> Tensor:
    """Draw each element independently from ``[lo, hi)``."""
    if not lo < hi:
        raise ConfigError(f"uniform_init needs lo < hi, got [{lo}, {hi})")
    shape = tuple(int(s) for s in shape)
    return lo + (hi - lo) * rng.random(shape)


# -- .bt serialization ------------------------------------------------------

def write_bt(x: Tensor, fh: BinaryIO) -> None:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ShapeError(f".bt stores rank-4 tensors, got shape {x.shape}")
    fh.write(_BT_HEADER.pack(BT_MAGIC, BT_VERSION, *x.shape))
    fh.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def read_bt(fh: BinaryIO) -> Tensor:
    head = fh.read(_BT_HEADER.size)
    if len(head) < _BT_HEADER.size:
        raise CorruptFileError("truncated .bt header")
    magic, version, n, c, h, w = _BT_HEADER.unpack(head)
    if magic != BT_MAGIC:
        raise CorruptFileError(f"bad .bt magic {magic!r}")
    if version != BT_VERSION:
        raise VersionError(f"unsupported .bt version {version}")
    count = n * c * h * w
    body = fh.read(8 * count)
    if len(body) != 8 * count:
        raise CorruptFileError(f"truncated .bt body: wanted {8 * count} bytes, got {len(body)}")
    return np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(n, c, h, w)


def to_bytes(x: Tensor) -> bytes:
    buf = io.BytesIO()
    write_bt(x, buf)
    return buf.getvalue()


def from_bytes(data: bytes) -> Tensor:
    return read_bt(io.BytesIO(data))


def save(x: Tensor, path: Union[str, Path]) -> None:
    with open(path, "wb") as fh:
        write_bt(x, fh)


def load(path: Union[str, Path]) -> Tensor:
    with open(path, "rb") as fh:
        x = read_bt(fh)
        if fh.read(1):
            raise CorruptFileError(f"trailing bytes after tensor in {path}")
    return x
