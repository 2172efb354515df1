"""Binary containers for datasets and parameter checkpoints, plus an IDX reader.

Dataset container ("FDDS", little-endian):
    magic "FDDS" | u32 version | u32 N, C, H, W, num_classes, num_groups
    f32 pixels row-major | u16 targets | u16 protected labels

Parameter checkpoint ("FDDP", little-endian):
    magic "FDDP" | u32 version | u32 tensor count
    per tensor: u32 ndim | u32 dims... | f64 data row-major
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import List, Tuple

import numpy as np

FDDS_MAGIC = b"FDDS"
FDDP_MAGIC = b"FDDP"
FORMAT_VERSION = 1


class ContainerError(ValueError):
    """Malformed or truncated container file."""


def write_dataset(path, images: np.ndarray, targets: np.ndarray, protected: np.ndarray,
                  num_classes: int, num_groups: int) -> None:
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4:
        raise ContainerError("write_dataset: images must be [N,C,H,W], got %s" % (images.shape,))
    n, c, h, w = images.shape
    targets = np.asarray(targets, dtype=np.uint16)
    protected = np.asarray(protected, dtype=np.uint16)
    if targets.shape != (n,) or protected.shape != (n,):
        raise ContainerError("write_dataset: label lengths do not match N=%d" % n)
    with open(path, "wb") as fh:
        fh.write(FDDS_MAGIC)
        fh.write(struct.pack("<7I", FORMAT_VERSION, n, c, h, w, num_classes, num_groups))
        fh.write(images.astype("<f4").tobytes())
        fh.write(targets.astype("<u2").tobytes())
        fh.write(protected.astype("<u2").tobytes())


def read_dataset(path) -> Tuple[np.ndarray, np.ndarray, np.ndarray, int, int]:
    raw = Path(path).read_bytes()
    if raw[:4] != FDDS_MAGIC:
        raise ContainerError("%s: bad magic %r, expected FDDS" % (path, raw[:4]))
    version, n, c, h, w, num_classes, num_groups = struct.unpack_from("<7I", raw, 4)
    if version != FORMAT_VERSION:
        raise ContainerError("%s: unsupported version %d" % (path, version))
    offset = 4 + 7 * 4
    npix = n * c * h * w
    need = offset + npix * 4 + n * 2 * 2
    if len(raw) != need:
        raise ContainerError("%s: expected %d bytes, found %d" % (path, need, len(raw)))
    images = np.frombuffer(raw, dtype="<f4", count=npix, offset=offset).reshape(n, c, h, w)
    offset += npix * 4
    targets = np.frombuffer(raw, dtype="<u2", count=n, offset=offset)
    offset += n * 2
    protected = np.frombuffer(raw, dtype="<u2", count=n, offset=offset)
    return (images.astype(np.float64), targets.astype(np.int64),
            protected.astype(np.int64), num_classes, num_groups)


def write_params(path, tensors: List[np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(FDDP_MAGIC)
        fh.write(struct.pack("<2I", FORMAT_VERSION, len(tensors)))
        for arr in tensors:
            arr = np.asarray(arr, dtype=np.float64)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack("<%dI" % arr.ndim, *arr.shape))
            fh.write(arr.astype("<f8").tobytes())


def read_params(path) -> List[np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != FDDP_MAGIC:
        raise ContainerError("%s: bad magic %r, expected FDDP" % (path, raw[:4]))
    version, count = struct.unpack_from("<2I", raw, 4)
    if version != FORMAT_VERSION:
        raise ContainerError("%s: unsupported version %d" % (path, version))
    offset = 12
    out = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        shape = struct.unpack_from("<%dI" % ndim, raw, offset)
        offset += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(shape)
        offset += size * 8
        out.append(arr.astype(np.float64))
    if offset != len(raw):
        raise ContainerError("%s: %d trailing bytes" % (path, len(raw) - offset))
    return out


# IDX convention: 2 zero bytes, dtype code, ndim, then big-endian u32 dims and data.
_IDX_DTYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: np.int16,
               0x0C: np.int32, 0x0D: np.float32, 0x0E: np.float64}


def read_idx(path) -> np.ndarray:
    """Read an IDX file (0x00000803 images / 0x00000801 labels, big-endian)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ContainerError("%s: not an IDX file" % path)
    code, ndim = raw[2], raw[3]
    if code not in _IDX_DTYPES:
        raise ContainerError("%s: unknown IDX dtype 0x%02x" % (path, code))
    dims = struct.unpack_from(">%dI" % ndim, raw, 4)
    dtype = np.dtype(_IDX_DTYPES[code]).newbyteorder(">")
    size = int(np.prod(dims)) if ndim else 1
    data = np.frombuffer(raw, dtype=dtype, count=size, offset=4 + 4 * ndim)
    return data.reshape(dims).astype(_IDX_DTYPES[code])
