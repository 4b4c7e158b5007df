"""Versioned binary parameter checkpoints (magic "BOFP").

Layout, all little-endian:
    magic "BOFP" | u32 version=1 | u32 tensor_count
    per tensor: u32 rank | u32 dims[rank] | f64 data (row-major)

Round trips are bit-exact; readers fail loudly with a categorized error.
"""

from __future__ import annotations

import numpy as np

from .errors import BofError

MAGIC = b"BOFP"
VERSION = 1


class CheckpointError(BofError):
    category = "checkpoint-error"


class CheckpointBadMagic(CheckpointError):
    category = "checkpoint-bad-magic"


class CheckpointBadVersion(CheckpointError):
    category = "checkpoint-bad-version"


class CheckpointTruncated(CheckpointError):
    category = "checkpoint-truncated"


def save_tensors(path, arrays) -> None:
    """Write an ordered list of float64 arrays."""
    chunks = [MAGIC, np.asarray([VERSION, len(arrays)], dtype="<u4").tobytes()]
    for a in arrays:
        a = np.asarray(a, dtype=np.float64)
        # rank/dims recorded before ascontiguousarray, which promotes 0-d
        chunks.append(np.asarray([a.ndim], dtype="<u4").tobytes())
        chunks.append(np.asarray(a.shape, dtype="<u4").tobytes())
        chunks.append(np.ascontiguousarray(a).astype("<f8", copy=False).tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def load_tensors(path):
    """Read back the ordered list of float64 arrays, bit-exactly."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 12:
        raise CheckpointTruncated(f"{path}: shorter than checkpoint header")
    if buf[:4] != MAGIC:
        raise CheckpointBadMagic(f"{path}: bad magic {buf[:4]!r}")
    version, count = np.frombuffer(buf, dtype="<u4", count=2, offset=4)
    if version != VERSION:
        raise CheckpointBadVersion(f"{path}: unsupported version {version}")
    off = 12
    arrays = []
    for i in range(count):
        if off + 4 > len(buf):
            raise CheckpointTruncated(f"{path}: truncated before tensor {i} rank")
        rank = int(np.frombuffer(buf, dtype="<u4", count=1, offset=off)[0])
        off += 4
        if off + 4 * rank > len(buf):
            raise CheckpointTruncated(f"{path}: truncated in tensor {i} dims")
        dims = np.frombuffer(buf, dtype="<u4", count=rank, offset=off).astype(np.int64)
        off += 4 * rank
        n = int(np.prod(dims)) if rank > 0 else 1
        if off + 8 * n > len(buf):
            raise CheckpointTruncated(f"{path}: truncated in tensor {i} data")
        data = np.frombuffer(buf, dtype="<f8", count=n, offset=off).copy()
        off += 8 * n
        arrays.append(data.reshape(tuple(dims)) if rank > 0 else data.reshape(()))
    return arrays
