"""Reader and writer for the IDX files used by the MNIST distribution.

Only unsigned-byte payloads are supported: magic 0x00000803 for image
stacks (count, rows, cols) and 0x00000801 for label vectors.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    def __init__(self, path, offset: int, message: str):
        super().__init__(f"{path}: {message} (offset {offset})")
        self.offset = offset


def _read(path):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IdxFormatError(path, 0, "file too short for an IDX magic number")
    (magic,) = struct.unpack_from(">I", raw, 0)
    if magic not in (IMAGES_MAGIC, LABELS_MAGIC):
        raise IdxFormatError(path, 0, f"bad magic 0x{magic:08x}")
    ndim = magic & 0xFF
    if len(raw) < 4 + 4 * ndim:
        raise IdxFormatError(path, 4, f"truncated header, expected {ndim} dimensions")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    start = 4 + 4 * ndim
    count = int(np.prod(dims, dtype=np.int64))
    if len(raw) - start < count:
        raise IdxFormatError(path, len(raw), f"payload truncated: need {count} bytes after offset {start}")
    data = np.frombuffer(raw, np.uint8, count, start).reshape(dims)
    return magic, data


def load_idx(path) -> np.ndarray:
    """Images become a (rows*cols, count) float matrix in [0, 1]; labels an int64 vector."""
    magic, data = _read(path)
    if magic == LABELS_MAGIC:
        return data.astype(np.int64)
    return data.reshape(data.shape[0], -1).T.astype(np.float64) / 255.0


def load_idx_raw(path) -> np.ndarray:
    """Payload in its stored shape and dtype (uint8)."""
    return _read(path)[1].copy()


def write_idx(path, data: np.ndarray) -> Path:
    """Write a uint8 label vector (1-D) or image stack (count, rows, cols)."""
    data = np.asarray(data)
    if data.dtype != np.uint8:
        raise TypeError("IDX writer expects uint8 data")
    if data.ndim == 1:
        magic = LABELS_MAGIC
    elif data.ndim == 3:
        magic = IMAGES_MAGIC
    else:
        raise ValueError(f"expected 1-D labels or 3-D images, got {data.ndim}-D")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{data.ndim}I", *data.shape))
        fh.write(np.ascontiguousarray(data).tobytes())
    return path
