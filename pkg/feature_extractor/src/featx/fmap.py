"""Writer for the FMAP feature-tensor exchange format.

Implemented independently from the registration engine on purpose: the
byte layout below is the contract between the two packages, and the
engine's reader validates every file this writer produces.

    bytes 0..3   magic "FMAP"
    byte  4      container version, must be 1
    byte  5      dtype code, must be 1 (32-bit little-endian IEEE float)
    byte  6      ndim, must be 3
    bytes 7..18  three little-endian uint32 dims: C, H, W
    payload      4*C*H*W bytes, channel-major (c, then row, then col)
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"FMAP"
VERSION = 1
DTYPE_F32 = 1
NDIM = 3
_HEADER = struct.Struct("<4sBBBIII")


def write_fmap(features: np.ndarray, path) -> None:
    """Write a (C, H, W) float array; values are converted to float32."""
    arr = np.asarray(features)
    if arr.ndim != NDIM:
        raise ValueError(f"features must be (C, H, W), got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError(f"feature dimensions must be >= 1, got {arr.shape}")
    c, h, w = arr.shape
    header = _HEADER.pack(MAGIC, VERSION, DTYPE_F32, NDIM, c, h, w)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def peek_header(path) -> tuple:
    """(C, H, W) from a file's header, without loading the payload."""
    with open(path, "rb") as fh:
        blob = fh.read(_HEADER.size)
    if len(blob) < _HEADER.size:
        raise ValueError(f"{path}: too short for an FMAP header")
    magic, version, dtype, ndim, c, h, w = _HEADER.unpack(blob)
    if (magic, version, dtype, ndim) != (MAGIC, VERSION, DTYPE_F32, NDIM):
        raise ValueError(f"{path}: not a supported FMAP file")
    return c, h, w
