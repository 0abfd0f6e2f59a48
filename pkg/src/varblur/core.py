"""Raster, kernel-basis and mixing-field types.

Arrays are stored channel-planar: an image is ``(C, H, W)``, a kernel basis
``(B, K, K)`` and a mixing field ``(B, H, W)``.  Kernel tap
``(K // 2, K // 2)`` is the zero-displacement tap, so a centred delta is the
identity blur.

All types are frozen and their arrays are flagged read-only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionError, InvariantError

SUM_TOL = 1e-6
ENCODINGS = ("linear", "gamma")

# Max number of floats materialised at once by the per-pixel kernel synthesis.
_CHUNK_FLOATS = 1 << 22


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    message: str = ""
    location: Optional[Tuple[int, ...]] = None

    def __bool__(self):
        return self.ok

    def __str__(self):
        if self.ok:
            return "ok"
        if self.location is None:
            return self.message
        return f"{self.message} at {self.location}"


OK = ValidationReport(True)


def _fail(message, location=None):
    if location is not None:
        location = tuple(int(v) for v in location)
    return ValidationReport(False, message, location)


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# raw-array checks (shared by constructors and validate())
# ---------------------------------------------------------------------------

def _check_image_array(data):
    if data.ndim != 3:
        return _fail(f"image must be (C, H, W), got ndim={data.ndim}")
    if data.shape[0] not in (1, 3):
        return _fail(f"image must have 1 or 3 channels, got {data.shape[0]}")
    if data.shape[1] < 1 or data.shape[2] < 1:
        return _fail("image has an empty spatial dimension")
    bad = ~np.isfinite(data)
    if bad.any():
        return _fail("non-finite sample", np.argwhere(bad)[0])
    return OK


def _check_kernel_array(kernels, tol=SUM_TOL):
    if kernels.ndim != 3 or kernels.shape[1] != kernels.shape[2]:
        return _fail(f"kernels must be (B, K, K), got shape {kernels.shape}")
    if kernels.shape[0] < 1:
        return _fail("kernel basis is empty")
    if kernels.shape[1] % 2 == 0:
        return _fail(f"kernel side K={kernels.shape[1]} is not odd")
    bad = ~np.isfinite(kernels)
    if bad.any():
        return _fail("non-finite kernel entry", np.argwhere(bad)[0])
    neg = kernels < 0
    if neg.any():
        return _fail("negative kernel entry", np.argwhere(neg)[0])
    sums = kernels.sum(axis=(1, 2))
    off = np.abs(sums - 1.0) > tol
    if off.any():
        b = int(np.argmax(off))
        return _fail(f"kernel sums to {sums[b]:.9g}, not 1", (b,))
    return OK


def _check_field_array(coeffs, tol=SUM_TOL):
    if coeffs.ndim != 3:
        return _fail(f"mixing field must be (B, H, W), got shape {coeffs.shape}")
    bad = ~np.isfinite(coeffs)
    if bad.any():
        return _fail("non-finite coefficient", np.argwhere(bad)[0])
    neg = coeffs < 0
    if neg.any():
        return _fail("negative mixing coefficient", np.argwhere(neg)[0])
    sums = coeffs.sum(axis=0)
    off = np.abs(sums - 1.0) > tol
    if off.any():
        r, c = np.argwhere(off)[0]
        return _fail(f"coefficients sum to {sums[r, c]:.9g}, not 1", (r, c))
    return OK


def _check_labels(labels, n_segments):
    if labels.ndim != 2:
        return _fail(f"labels must be (H, W), got shape {labels.shape}")
    if labels.size and labels.min() < 0:
        return _fail("negative label", np.argwhere(labels < 0)[0])
    over = labels >= n_segments
    if over.any():
        return _fail(f"label >= segment count {n_segments}", np.argwhere(over)[0])
    return OK


def _raise_if(report):
    if not report.ok:
        raise InvariantError(report)


# ---------------------------------------------------------------------------
# types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Image:
    """Planar intensity raster of shape ``(C, H, W)``.

    A 2-D array is accepted and treated as a single channel.  Samples may
    exceed 1 (saturating light sources before clipping) but must be finite.
    """

    data: np.ndarray
    encoding: str = "linear"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        _raise_if(_check_image_array(data))
        if self.encoding not in ENCODINGS:
            raise ValueError(f"unknown encoding {self.encoding!r}")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def channels(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def with_data(self, data, encoding=None):
        return Image(data, self.encoding if encoding is None else encoding)


@dataclass(frozen=True)
class KernelBasis:
    """``B`` non-negative, unit-sum kernels of odd side ``K``.

    Kernels whose sum is within ``SUM_TOL`` of one are divided by their sum so
    that mass is exact; pass ``renormalize=False`` to keep values bit-for-bit
    (used when decoding files).
    """

    kernels: np.ndarray
    renormalize: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        k = np.asarray(self.kernels, dtype=np.float64)
        if k.ndim == 2:
            k = k[None]
        _raise_if(_check_kernel_array(k))
        if self.renormalize:
            k = k / k.sum(axis=(1, 2), keepdims=True)
        object.__setattr__(self, "kernels", _frozen(k))

    @property
    def B(self):
        return self.kernels.shape[0]

    @property
    def K(self):
        return self.kernels.shape[1]

    def __len__(self):
        return self.B

    def __getitem__(self, b):
        return self.kernels[b]


@dataclass(frozen=True)
class MixingField:
    """Per-pixel convex weights of shape ``(B, H, W)``."""

    coeffs: np.ndarray
    renormalize: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        m = np.asarray(self.coeffs, dtype=np.float64)
        if m.ndim == 2:
            m = m[None]
        _raise_if(_check_field_array(m))
        if self.renormalize:
            m = m / m.sum(axis=0, keepdims=True)
        object.__setattr__(self, "coeffs", _frozen(m))

    @classmethod
    def uniform(cls, B, height, width):
        return cls(np.full((B, height, width), 1.0 / B))

    @classmethod
    def constant(cls, weights, height, width):
        w = np.asarray(weights, dtype=np.float64)
        return cls(np.broadcast_to(w[:, None, None], (w.size, height, width)))

    @property
    def B(self):
        return self.coeffs.shape[0]

    @property
    def height(self):
        return self.coeffs.shape[1]

    @property
    def width(self):
        return self.coeffs.shape[2]


@dataclass(frozen=True)
class SegmentMap:
    labels: np.ndarray
    n_segments: Optional[int] = None

    def __post_init__(self):
        lab = np.array(self.labels, dtype=np.int64, copy=True)
        n = self.n_segments
        if n is None:
            n = int(lab.max()) + 1 if lab.size else 0
        _raise_if(_check_labels(lab, n))
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "n_segments", int(n))

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    @property
    def segment_sizes(self):
        return np.bincount(self.labels.ravel(), minlength=self.n_segments)

    def masks(self):
        """Binary ``(S, H, W)`` indicator masks, one per label."""
        ids = np.arange(self.n_segments)[:, None, None]
        return (self.labels[None] == ids).astype(np.float64)


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def check_compatible(basis: KernelBasis, field: MixingField):
    if basis.B != field.B:
        raise DimensionError(
            f"basis has {basis.B} kernels but mixing field has {field.B} planes")


def _blend(kernels, coeffs):
    """``sum_b coeffs[b, ...] * kernels[b]`` with a fixed summation order.

    ``coeffs`` has shape ``(B, *S)``; result has shape ``(*S, K, K)``.
    """
    extra = (slice(None),) * (coeffs.ndim - 1) + (None, None)
    out = coeffs[0][extra] * kernels[0]
    for b in range(1, kernels.shape[0]):
        out = out + coeffs[b][extra] * kernels[b]
    return out


def _l2(k):
    flat = k.reshape(k.shape[:-2] + (-1,))
    return np.sqrt(np.sum(flat * flat, axis=-1))


def _pixel_index(field, i):
    if np.ndim(i) == 0:
        r, c = divmod(int(i), field.width)
    else:
        r, c = (int(v) for v in i)
    if not (0 <= r < field.height and 0 <= c < field.width):
        raise IndexError(f"pixel {(r, c)} outside {field.height}x{field.width}")
    return r, c


def synth_pixel_kernel(basis: KernelBasis, field: MixingField,
                       i: Union[int, Sequence[int]]) -> np.ndarray:
    """Per-pixel kernel ``sum_b m^b_i k^b`` at pixel ``i``.

    ``i`` is either a ``(row, col)`` pair or a flat row-major index.
    """
    check_compatible(basis, field)
    r, c = _pixel_index(field, i)
    return _blend(basis.kernels, field.coeffs[:, r, c])


def synth_kernel_field(basis: KernelBasis, field: MixingField,
                       rows: Optional[slice] = None) -> np.ndarray:
    """Dense ``(H, W, K, K)`` kernel field (or the requested row band)."""
    check_compatible(basis, field)
    coeffs = field.coeffs if rows is None else field.coeffs[:, rows]
    return _blend(basis.kernels, coeffs)


def kernel_norm_map(basis: KernelBasis, field: MixingField) -> np.ndarray:
    """L2 norm of the synthesized kernel at every pixel, shape ``(H, W)``.

    A delta kernel has norm 1; spread kernels have smaller norm.
    """
    check_compatible(basis, field)
    H, W, K = field.height, field.width, basis.K
    out = np.empty((H, W))
    step = max(1, _CHUNK_FLOATS // max(1, W * K * K))
    for r0 in range(0, H, step):
        band = slice(r0, min(H, r0 + step))
        out[band] = _l2(synth_kernel_field(basis, field, band))
    return out


def validate(obj, kind: Optional[str] = None) -> ValidationReport:
    """Check the invariants of a constructed type or of a raw array.

    Raw arrays need ``kind`` set to one of ``"image"``, ``"kernels"``,
    ``"field"`` or ``"labels"``.  Returns the first violation found.
    """
    if isinstance(obj, Image):
        return _check_image_array(obj.data)
    if isinstance(obj, KernelBasis):
        return _check_kernel_array(obj.kernels)
    if isinstance(obj, MixingField):
        return _check_field_array(obj.coeffs)
    if isinstance(obj, SegmentMap):
        rep = _check_labels(obj.labels, obj.n_segments)
        if rep.ok and obj.segment_sizes.sum() != obj.labels.size:
            return _fail("segment sizes do not cover the image")
        return rep
    arr = np.asarray(obj)
    if kind == "image":
        return _check_image_array(arr if arr.ndim == 3 else arr[None])
    if kind == "kernels":
        return _check_kernel_array(arr if arr.ndim == 3 else arr[None])
    if kind == "field":
        return _check_field_array(arr if arr.ndim == 3 else arr[None])
    if kind == "labels":
        n = int(arr.max()) + 1 if arr.size else 0
        return _check_labels(arr, n)
    raise TypeError(f"cannot validate {type(obj).__name__} without a valid kind")


def delta_kernel(K: int) -> np.ndarray:
    k = np.zeros((K, K))
    k[K // 2, K // 2] = 1.0
    return k


def box_kernel(size: int, K: Optional[int] = None) -> np.ndarray:
    """Uniform ``size x size`` box centred in a ``K x K`` support."""
    K = size if K is None else K
    if size % 2 == 0 or size > K:
        raise ValueError("box size must be odd and no larger than K")
    k = np.zeros((K, K))
    o = (K - size) // 2
    k[o:o + size, o:o + size] = 1.0 / (size * size)
    return k
