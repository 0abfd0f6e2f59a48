"""Binary containers and PNG import/export.

``VBK1``: magic, little-endian u32 ``B, K, H, W, flags``, then ``B*K*K`` f32
kernel taps and, when ``flags & 1``, ``B*H*W`` f32 mixing coefficients.

``VBI1``: magic, u32 ``H, W, C``, then ``C*H*W`` f32 samples (planar).
"""

from __future__ import annotations

import os
import struct

import numpy as np
import png

from .core import Image, KernelBasis, MixingField
from .errors import DimensionError, FormatError, TruncatedFileError

VBK_MAGIC = b"VBK1"
VBI_MAGIC = b"VBI1"
FLAG_HAS_FIELD = 1

PNG_COMPRESSION = 9

_F32 = np.dtype("<f4")


def _take(buf, offset, n, what):
    end = offset + n
    if end > len(buf):
        raise TruncatedFileError(f"truncated {what}: need {n} bytes at offset {offset}")
    return buf[offset:end], end


def _take_f32(buf, offset, count, what):
    raw, offset = _take(buf, offset, count * 4, what)
    return np.frombuffer(raw, dtype=_F32).astype(np.float64), offset


def _f32_bytes(a):
    a = np.asarray(a, dtype=np.float64)
    if np.any(np.abs(a) > np.finfo(_F32).max):
        raise FormatError("value overflows float32")
    return np.ascontiguousarray(a, dtype=_F32).tobytes()


# --- VBK1 -------------------------------------------------------------------

def pack_vbk1(basis: KernelBasis, field: MixingField | None = None) -> bytes:
    H = W = 0
    flags = 0
    if field is not None:
        if field.B != basis.B:
            raise DimensionError("basis and field disagree on B")
        H, W = field.height, field.width
        flags |= FLAG_HAS_FIELD
    parts = [VBK_MAGIC, struct.pack("<5I", basis.B, basis.K, H, W, flags),
             _f32_bytes(basis.kernels)]
    if field is not None:
        parts.append(_f32_bytes(field.coeffs))
    return b"".join(parts)


def unpack_vbk1(buf: bytes, offset: int = 0):
    """Decode a VBK1 block; returns ``(basis, field_or_None, end_offset)``."""
    magic, offset = _take(buf, offset, 4, "VBK1 magic")
    if magic != VBK_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {VBK_MAGIC!r}")
    head, offset = _take(buf, offset, 20, "VBK1 header")
    B, K, H, W, flags = struct.unpack("<5I", head)
    kern, offset = _take_f32(buf, offset, B * K * K, "kernel data")
    basis = KernelBasis(kern.reshape(B, K, K), renormalize=False)
    field = None
    if flags & FLAG_HAS_FIELD:
        coeffs, offset = _take_f32(buf, offset, B * H * W, "mixing data")
        field = MixingField(coeffs.reshape(B, H, W), renormalize=False)
    return basis, field, offset


def write_vbk1(path, basis, field=None):
    with open(path, "wb") as f:
        f.write(pack_vbk1(basis, field))


def read_vbk1(path):
    """Read a kernel container; returns ``(basis, field_or_None)``."""
    with open(path, "rb") as f:
        buf = f.read()
    basis, field, end = unpack_vbk1(buf)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after VBK1 data")
    return basis, field


# --- VBI1 -------------------------------------------------------------------

def pack_vbi1(img: Image) -> bytes:
    C, H, W = img.shape
    return VBI_MAGIC + struct.pack("<3I", H, W, C) + _f32_bytes(img.data)


def unpack_vbi1(buf: bytes, offset: int = 0, encoding="linear"):
    magic, offset = _take(buf, offset, 4, "VBI1 magic")
    if magic != VBI_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {VBI_MAGIC!r}")
    head, offset = _take(buf, offset, 12, "VBI1 header")
    H, W, C = struct.unpack("<3I", head)
    data, offset = _take_f32(buf, offset, C * H * W, "image data")
    return Image(data.reshape(C, H, W), encoding), offset


def write_vbi1(path, img):
    with open(path, "wb") as f:
        f.write(pack_vbi1(img))


def read_vbi1(path, encoding="linear"):
    with open(path, "rb") as f:
        buf = f.read()
    img, end = unpack_vbi1(buf, encoding=encoding)
    if end != len(buf):
        raise FormatError(f"{len(buf) - end} trailing bytes after VBI1 data")
    return img


# --- PNG --------------------------------------------------------------------

def _png_rows(path):
    reader = png.Reader(filename=os.fspath(path))
    width, height, rows, info = reader.read()
    return width, height, np.vstack([np.asarray(r, dtype=np.uint32) for r in rows]), info


def read_png(path, encoding="gamma") -> Image:
    """Load an 8- or 16-bit PNG as an :class:`Image` scaled to ``[0, 1]``.

    Palette images are expanded to RGB; alpha is dropped.
    """
    reader = png.Reader(filename=os.fspath(path))
    width, height, rows, info = reader.asDirect()
    planes = info["planes"]
    maxval = (1 << info["bitdepth"]) - 1
    a = np.vstack([np.asarray(r, dtype=np.float64) for r in rows])
    a = a.reshape(height, width, planes)
    if info.get("alpha"):
        a = a[..., :-1]
    return Image(np.moveaxis(a / maxval, -1, 0), encoding)


def read_label_png(path) -> np.ndarray:
    """Integer label map from an indexed (palette) or grayscale PNG."""
    width, height, a, info = _png_rows(path)
    if info["planes"] != 1:
        raise FormatError(f"{path}: label image must be single-plane or indexed")
    return a.reshape(height, width).astype(np.int64)


def write_png(path, img, bitdepth=8):
    """Write ``img`` (Image or array in ``[0, 1]``) as 8- or 16-bit PNG.

    Values are clipped and rounded; encoder settings are fixed so repeated
    writes are byte-identical.
    """
    if bitdepth not in (8, 16):
        raise ValueError("bitdepth must be 8 or 16")
    data = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    if data.ndim == 2:
        data = data[None]
    C, H, W = data.shape
    maxval = (1 << bitdepth) - 1
    q = np.rint(np.clip(data, 0.0, 1.0) * maxval).astype(np.uint16 if bitdepth == 16 else np.uint8)
    rows = np.moveaxis(q, 0, -1).reshape(H, W * C)
    writer = png.Writer(W, H, greyscale=(C == 1), bitdepth=bitdepth,
                        compression=PNG_COMPRESSION)
    with open(path, "wb") as f:
        writer.write(f, rows.tolist())


def write_label_png(path, labels):
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() > 255:
        raise ValueError("labels must fit in 8 bits")
    H, W = labels.shape
    writer = png.Writer(W, H, greyscale=True, bitdepth=8, compression=PNG_COMPRESSION)
    with open(path, "wb") as f:
        writer.write(f, labels.astype(np.uint8).tolist())
