"""Blur-region detection from a per-pixel kernel field.

A pixel is as sharp as its kernel is concentrated: the L2 norm of a
normalised kernel is 1 for a delta and shrinks as the mass spreads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import KernelBasis, MixingField, kernel_norm_map
from .errors import DimensionError


def blur_map(basis: KernelBasis, field: MixingField) -> np.ndarray:
    """``(H, W)`` sharpness map, higher is sharper."""
    return kernel_norm_map(basis, field)


def blur_scores(sharpness) -> np.ndarray:
    """``1 - sharpness / max(sharpness)``; 0 at the sharpest pixel."""
    s = np.asarray(sharpness, dtype=np.float64)
    top = s.max()
    return 1.0 - s / top if top > 0 else np.zeros_like(s)


@dataclass(frozen=True)
class APResult:
    value: float
    n_positive: int
    n_total: int

    @property
    def defined(self):
        return self.n_positive > 0


def average_precision_details(scores, gt_mask) -> APResult:
    """Step-integrated area under the precision-recall curve.

    Thresholds are the distinct score values, visited from high to low;
    ``AP = sum_n (R_n - R_{n-1}) P_n``.  Tied scores enter together, so a
    constant map gives the positive fraction.  With no positives the value
    is nan.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    g = np.asarray(gt_mask).astype(bool).ravel()
    if s.shape != g.shape:
        raise DimensionError(f"score map has {s.size} values, mask {g.size}")
    n_pos = int(g.sum())
    if n_pos == 0:
        return APResult(math.nan, 0, s.size)
    order = np.argsort(-s, kind="stable")
    s, g = s[order], g[order]
    # last index of every run of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(g)[ends]
    precision = tp / (ends + 1.0)
    recall = tp / n_pos
    d_recall = np.diff(np.r_[0.0, recall])
    return APResult(float(np.sum(d_recall * precision)), n_pos, s.size)


def average_precision(scores, gt_mask) -> float:
    return average_precision_details(scores, gt_mask).value


def detection_ap(basis: KernelBasis, field: MixingField, gt_mask) -> float:
    """AP of the kernel-derived blur scores against a binary "blurred" mask."""
    gt = np.asarray(gt_mask)
    if gt.shape != (field.height, field.width):
        raise DimensionError(f"mask {gt.shape} vs field {(field.height, field.width)}")
    return average_precision(blur_scores(blur_map(basis, field)), gt)
