"""Dense float64 tensors and the binary tensor-archive file format.

An archive is an ordered map of name -> tensor, stored as:

    magic "QIXT" | version u64 | entry count u64
    per entry: name length u64 | name (ASCII) | rank u64
               | extents u64 x rank | data f64 x prod(extents)

All integers are little-endian unsigned 64-bit; data is little-endian
IEEE-754 double, row-major. Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from typing import Iterable

import numpy as np

MAGIC = b"QIXT"
FORMAT_VERSION = 1


class ArchiveError(Exception):
    """Malformed, truncated, or otherwise invalid archive data.

    ``offset`` is the byte offset at which reading or validation failed,
    when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def as_tensor(values, shape: Iterable[int] | None = None) -> np.ndarray:
    """Coerce ``values`` to a C-contiguous float64 array of rank >= 1."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if shape is not None:
        arr = reshape(arr, shape)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    _check_shape(arr.shape)
    return arr


def reshape(t: np.ndarray, new_shape: Iterable[int]) -> np.ndarray:
    """Reinterpret ``t`` with ``new_shape``; row-major order is preserved.

    Unlike ``np.reshape`` this rejects -1 wildcards and reports the element
    counts on mismatch.
    """
    new_shape = tuple(int(e) for e in new_shape)
    _check_shape(new_shape)
    old_n = int(np.prod(t.shape, dtype=np.int64))
    new_n = int(np.prod(new_shape, dtype=np.int64))
    if old_n != new_n:
        raise ValueError(
            f"cannot reshape {tuple(t.shape)} ({old_n} elements) "
            f"to {new_shape} ({new_n} elements)"
        )
    return np.ascontiguousarray(t, dtype=np.float64).reshape(new_shape)


def _check_shape(shape: tuple[int, ...]) -> None:
    if len(shape) < 1:
        raise ValueError("tensor rank must be >= 1")
    for e in shape:
        if e < 1:
            raise ValueError(f"tensor extents must be >= 1, got {shape}")


def _check_name(name: str) -> None:
    if not name:
        raise ArchiveError("entry name must be nonempty")
    if not name.isascii():
        raise ArchiveError(f"entry name must be ASCII: {name!r}")
    if "/" in name or "\\" in name:
        raise ArchiveError(f"entry name must not contain path separators: {name!r}")


def write_archive(entries: dict[str, np.ndarray], path) -> None:
    """Write an ordered name -> tensor map to ``path``.

    Rejects non-finite elements, reporting the entry name and flat index
    of the first offender.
    """
    prepared: list[tuple[str, np.ndarray]] = []
    seen: set[str] = set()
    for name, tensor in entries.items():
        _check_name(name)
        if name in seen:
            raise ArchiveError(f"duplicate entry name: {name!r}")
        seen.add(name)
        arr = as_tensor(tensor)
        finite = np.isfinite(arr.ravel())
        if not finite.all():
            idx = int(np.argmin(finite))
            raise ArchiveError(
                f"non-finite value in entry {name!r} at flat index {idx}: "
                f"{arr.ravel()[idx]}"
            )
        prepared.append((name, arr))

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<QQ", FORMAT_VERSION, len(prepared)))
        for name, arr in prepared:
            raw = name.encode("ascii")
            fh.write(struct.pack("<Q", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<Q", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8", copy=False).tobytes(order="C"))


def read_archive(path) -> dict[str, np.ndarray]:
    """Read an archive written by :func:`write_archive`.

    Returns an ordered dict preserving on-disk entry order. Raises
    :class:`ArchiveError` on bad magic, unknown version, or truncation,
    reporting the byte offset of the failure.
    """
    with open(path, "rb") as fh:
        data = fh.read()

    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise ArchiveError(f"truncated archive while reading {what}", offset=pos)
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise ArchiveError(f"bad magic, expected {MAGIC!r}", offset=0)
    version, count = struct.unpack("<QQ", take(16, "header"))
    if version != FORMAT_VERSION:
        raise ArchiveError(f"unsupported format version {version}", offset=4)

    entries: dict[str, np.ndarray] = {}
    for i in range(count):
        (name_len,) = struct.unpack("<Q", take(8, f"entry {i} name length"))
        name_off = pos
        try:
            name = take(name_len, f"entry {i} name").decode("ascii")
        except UnicodeDecodeError:
            raise ArchiveError(f"entry {i} name is not ASCII", offset=name_off)
        _check_name(name)
        if name in entries:
            raise ArchiveError(f"duplicate entry name {name!r}", offset=name_off)
        (rank,) = struct.unpack("<Q", take(8, f"entry {name!r} rank"))
        if rank < 1:
            raise ArchiveError(f"entry {name!r} has rank 0", offset=pos - 8)
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, f"entry {name!r} extents"))
        _check_shape(shape)
        n_elem = int(np.prod(shape, dtype=np.int64))
        raw = take(8 * n_elem, f"entry {name!r} data")
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        entries[name] = arr

    if pos != len(data):
        raise ArchiveError(f"{len(data) - pos} trailing bytes after last entry", offset=pos)
    return entries
