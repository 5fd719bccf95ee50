"""
==============================================================================
MTNSR1 TENSOR RECORDS
==============================================================================
Little-endian binary layout used for checkpoints and density-map dumps:

    b"MTNSR1" | u32 rank | rank x u32 extents | float64 scalars (row-major)

A named-tensor archive wraps records behind a UTF-8 name index:

    b"MTNSRA" | u32 count | count x (u32 name length | name bytes | record)
==============================================================================
"""

import struct
from pathlib import Path
from typing import BinaryIO, Dict, Union

import numpy as np

from errors import DataError

MAGIC = b"MTNSR1"
ARCHIVE_MAGIC = b"MTNSRA"
SCALAR = np.dtype("<f8")

PathLike = Union[str, Path]


class TensorFormatError(DataError):
    """Raised when a tensor record or archive is malformed"""
    pass


def _read_exact(stream: BinaryIO, size: int, what: str) -> bytes:
    chunk = stream.read(size)
    if len(chunk) != size:
        raise TensorFormatError(f"Truncated tensor data while reading {what}")
    return chunk


def write_record(stream: BinaryIO, array: np.ndarray) -> None:
    array = np.asarray(array)
    stream.write(MAGIC)
    stream.write(struct.pack("<I", array.ndim))
    stream.write(struct.pack(f"<{array.ndim}I", *array.shape))
    stream.write(np.ascontiguousarray(array, dtype=SCALAR).tobytes())


def read_record(stream: BinaryIO) -> np.ndarray:
    magic = _read_exact(stream, len(MAGIC), "magic")
    if magic != MAGIC:
        raise TensorFormatError(f"Bad tensor magic {magic!r}, expected {MAGIC!r}")
    (rank,) = struct.unpack("<I", _read_exact(stream, 4, "rank"))
    shape = struct.unpack(f"<{rank}I", _read_exact(stream, 4 * rank, "extents"))
    count = int(np.prod(shape)) if rank else 1
    payload = _read_exact(stream, count * SCALAR.itemsize, "scalars")
    return np.frombuffer(payload, dtype=SCALAR).reshape(shape).astype(np.float64)


def save_tensor(path: PathLike, array: np.ndarray) -> None:
    with open(path, "wb") as f:
        write_record(f, array)


def load_tensor(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise TensorFormatError(f"Tensor file not found: {path}")
    with open(path, "rb") as f:
        return read_record(f)


def save_archive(path: PathLike, tensors: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(ARCHIVE_MAGIC)
        f.write(struct.pack("<I", len(tensors)))
        for name, array in tensors.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            write_record(f, array)


def load_archive(path: PathLike) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise TensorFormatError(f"Archive not found: {path}")
    tensors: Dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = _read_exact(f, len(ARCHIVE_MAGIC), "archive magic")
        if magic != ARCHIVE_MAGIC:
            raise TensorFormatError(f"Bad archive magic {magic!r}, expected {ARCHIVE_MAGIC!r}")
        (count,) = struct.unpack("<I", _read_exact(f, 4, "entry count"))
        for _ in range(count):
            (length,) = struct.unpack("<I", _read_exact(f, 4, "name length"))
            name = _read_exact(f, length, "name").decode("utf-8")
            tensors[name] = read_record(f)
    return tensors
