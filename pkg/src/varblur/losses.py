"""Training losses and kernel/mask regularisers as plain functions.

Sums run over pixels and channels without normalising by channel count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (_CHUNK_FLOATS, Image, KernelBasis, MixingField, SegmentMap,
                   check_compatible, kernel_norm_map, synth_kernel_field)
from .errors import DimensionError


@dataclass(frozen=True)
class SegmentWeights:
    """Per-pixel weights; ``from_segments`` gives ``1 / |segment of i|``."""

    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64, copy=True)
        if w.ndim != 2 or not np.all(w > 0):
            raise ValueError("weights must be a positive (H, W) array")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_segments(cls, segments: SegmentMap):
        sizes = segments.segment_sizes.astype(np.float64)
        return cls(1.0 / sizes[segments.labels])

    @classmethod
    def uniform(cls, height, width, value=1.0):
        return cls(np.full((height, width), float(value)))


def _weights(w, shape):
    if isinstance(w, SegmentMap):
        w = SegmentWeights.from_segments(w)
    arr = w.w if isinstance(w, SegmentWeights) else np.asarray(w, dtype=np.float64)
    if arr.shape != tuple(shape):
        raise DimensionError(f"weights {arr.shape} do not match image {tuple(shape)}")
    return arr


def _planes(x):
    a = x.data if isinstance(x, Image) else np.asarray(x, dtype=np.float64)
    return a[None] if a.ndim == 2 else a


def reblur_loss(v_pred, v_gt, w, gamma: float = 2.2) -> float:
    """``sum_i w_i (v_i^gamma - (v^GT_i)^gamma)^2``, summed over channels."""
    a, b = _planes(v_pred), _planes(v_gt)
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    weights = _weights(w, a.shape[1:])
    d = np.power(np.maximum(a, 0.0), gamma) - np.power(np.maximum(b, 0.0), gamma)
    return float(np.sum(weights[None] * d * d))


def kernel_loss(basis: KernelBasis, field: MixingField, gt_kernels, w) -> float:
    """``sum_i w_i ||sum_b m^b_i k^b - k^GT_i||^2`` with ``gt_kernels`` of shape (H, W, K, K)."""
    check_compatible(basis, field)
    gt = np.asarray(gt_kernels, dtype=np.float64)
    H, W, K = field.height, field.width, basis.K
    if gt.shape != (H, W, K, K):
        raise DimensionError(f"ground-truth kernels {gt.shape}, expected {(H, W, K, K)}")
    weights = _weights(w, (H, W))
    per_pixel = np.empty((H, W))
    step = max(1, _CHUNK_FLOATS // max(1, W * K * K))
    for r0 in range(0, H, step):
        band = slice(r0, min(H, r0 + step))
        d = (synth_kernel_field(basis, field, band) - gt[band]).reshape(-1, W, K * K)
        per_pixel[band] = np.sum(d * d, axis=-1)
    return float(np.sum(weights * per_pixel))


def restoration_loss(u_pred, u_gt) -> float:
    a, b = _planes(u_pred), _planes(u_gt)
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.sum(d * d))


def kernel_l2_reg(basis: KernelBasis, field: MixingField) -> float:
    """Mean squared L2 norm of the synthesized per-pixel kernels."""
    return float(np.mean(kernel_norm_map(basis, field) ** 2))


def mask_tv_reg(field) -> float:
    """Mean of ``|dx| + |dy|`` per coefficient plane, summed over planes.

    Forward differences; the mean runs over the pixels that have both a
    right and a lower neighbour, so a 0/1 checkerboard scores exactly 2.
    Single-row or single-column planes average their one difference
    direction.  Accepts a :class:`MixingField` or any ``(B, H, W)`` /
    ``(H, W)`` array.
    """
    m = field.coeffs if isinstance(field, MixingField) else np.asarray(field, dtype=np.float64)
    if m.ndim == 2:
        m = m[None]
    H, W = m.shape[1:]
    if H == 1 and W == 1:
        return 0.0
    if H == 1 or W == 1:
        return float(np.sum(np.mean(np.abs(np.diff(m.reshape(len(m), -1), axis=1)), axis=1)))
    dx = np.abs(m[:, :-1, 1:] - m[:, :-1, :-1])
    dy = np.abs(m[:, 1:, :-1] - m[:, :-1, :-1])
    return float(np.sum(np.mean(dx + dy, axis=(1, 2))))
