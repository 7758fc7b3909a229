"""Feature-tensor exchange format, image I/O, resampling, normalization.

The FMAP container is deliberately minimal so independent extractors can
emit it without sharing code: a 19-byte header followed by the raw tensor.

    bytes 0..3   magic "FMAP"
    byte  4      container version, must be 1
    byte  5      dtype code, must be 1 (32-bit little-endian IEEE float)
    byte  6      ndim, must be 3
    bytes 7..18  three little-endian uint32 dims: C, H, W
    payload      4*C*H*W bytes, channel-major (c, then row, then col)

Reads and writes are bit-exact round trips.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

from .model import FeatureMap, ImageBuffer

FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1
FMAP_DTYPE_F32 = 1
FMAP_NDIM = 3
_HEADER = struct.Struct("<4sBBBIII")


class FmapError(ValueError):
    """Base class for FMAP container problems."""


class FmapFormatError(FmapError):
    """Header bytes do not describe a supported FMAP tensor."""


class FmapLengthError(FmapError):
    """Header and payload length disagree (truncated or oversized file)."""


class UnsupportedImageError(ValueError):
    """Image file exists but is not an 8-bit PNG/PGM/PPM."""


def write_fmap(fm: FeatureMap, path) -> None:
    header = _HEADER.pack(FMAP_MAGIC, FMAP_VERSION, FMAP_DTYPE_F32, FMAP_NDIM,
                          fm.channels, fm.height, fm.width)
    payload = np.ascontiguousarray(fm.data, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def read_fmap(path) -> FeatureMap:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FmapFormatError(f"{path}: file too short for an FMAP header")
    magic, version, dtype, ndim, c, h, w = _HEADER.unpack_from(blob)
    if magic != FMAP_MAGIC:
        raise FmapFormatError(f"{path}: bad magic {magic!r}")
    if version != FMAP_VERSION:
        raise FmapFormatError(f"{path}: unsupported container version {version}")
    if dtype != FMAP_DTYPE_F32:
        raise FmapFormatError(f"{path}: unsupported dtype code {dtype}")
    if ndim != FMAP_NDIM:
        raise FmapFormatError(f"{path}: expected 3 dims, header says {ndim}")
    if min(c, h, w) < 1:
        raise FmapFormatError(f"{path}: dims must be >= 1, got ({c}, {h}, {w})")
    expected = 4 * c * h * w
    payload = blob[_HEADER.size:]
    if len(payload) != expected:
        raise FmapLengthError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(c, h, w)
    return FeatureMap(data.copy(), normalized=False)


_REJECT_MODES = ("I", "I;16", "I;16B", "I;16L", "I;16N", "F")


def load_image(path) -> ImageBuffer:
    """Decode an 8-bit PNG or binary PGM/PPM into [0, 1] float samples."""
    try:
        with Image.open(path) as im:
            if im.mode in _REJECT_MODES:
                raise UnsupportedImageError(
                    f"{path}: unsupported bit depth (mode {im.mode}); 8-bit only"
                )
            if im.mode in ("1", "L"):
                im = im.convert("L")
            elif im.mode == "LA":
                im = im.convert("L")
            elif im.mode in ("P", "RGB", "RGBA"):
                im = im.convert("RGB")
            else:
                raise UnsupportedImageError(f"{path}: unsupported image mode {im.mode}")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except UnsupportedImageError:
        raise
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise UnsupportedImageError(f"{path}: cannot decode image ({exc})") from exc
    return ImageBuffer(arr)


def save_image(img: ImageBuffer, path) -> None:
    arr = np.clip(np.rint(np.asarray(img.samples, dtype=np.float64) * 255.0), 0, 255)
    pil = Image.fromarray(arr.astype(np.uint8))
    pil.save(path)


def _axis_coords(n_in: int, n_out: int) -> np.ndarray:
    # Align-corners rule: first and last sample centers coincide. A single
    # output sample degenerates to the first input sample.
    if n_out == 1:
        return np.zeros(1, dtype=np.float64)
    return np.linspace(0.0, n_in - 1.0, n_out, dtype=np.float64)


def _bilinear_resize(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    in_h, in_w = plane.shape
    src = np.asarray(plane, dtype=np.float64)
    xs = _axis_coords(in_w, out_w)
    ys = _axis_coords(in_h, out_h)
    x0 = np.clip(np.floor(xs).astype(np.intp), 0, in_w - 1)
    y0 = np.clip(np.floor(ys).astype(np.intp), 0, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    fx = xs - x0
    fy = (ys - y0)[:, None]
    top = src[np.ix_(y0, x0)] * (1.0 - fx) + src[np.ix_(y0, x1)] * fx
    bot = src[np.ix_(y1, x0)] * (1.0 - fx) + src[np.ix_(y1, x1)] * fx
    return top * (1.0 - fy) + bot * fy


def bilinear_sample(plane: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample a 2D plane at continuous (x, y), edge-clamped, any shape."""
    in_h, in_w = plane.shape
    src = np.asarray(plane, dtype=np.float64)
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, in_w - 1.0)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, in_h - 1.0)
    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    fx = x - x0
    fy = y - y0
    top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
    bot = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def resample_image(img: ImageBuffer, out_w: int, out_h: int) -> ImageBuffer:
    """Bilinear resize (align-corners, edge-clamped) to out_w x out_h."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output dimensions must be >= 1, got ({out_w}, {out_h})")
    if img.samples.ndim == 2:
        out = _bilinear_resize(img.samples, out_h, out_w)
    else:
        out = np.stack(
            [_bilinear_resize(img.samples[:, :, c], out_h, out_w) for c in range(3)],
            axis=2,
        )
    return ImageBuffer(out.astype(np.float32))


def upsample_featuremap(fm: FeatureMap, out_h: int, out_w: int) -> FeatureMap:
    """Per-channel bilinear resize; the result is no longer unit-normalized."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output dimensions must be >= 1, got ({out_h}, {out_w})")
    out = np.empty((fm.channels, out_h, out_w), dtype=np.float32)
    for c in range(fm.channels):
        out[c] = _bilinear_resize(fm.data[c], out_h, out_w)
    return FeatureMap(out, normalized=False)


def l2_normalize_channels(fm: FeatureMap) -> FeatureMap:
    """Scale each pixel's channel vector to unit L2 norm.

    All-zero vectors are left at zero (they then score 0 against every
    query) instead of producing NaNs.
    """
    data = fm.data.astype(np.float64)
    norms = np.sqrt(np.sum(data * data, axis=0, keepdims=True))
    safe = np.where(norms > 0.0, norms, 1.0)
    return FeatureMap((data / safe).astype(np.float32), normalized=True)
