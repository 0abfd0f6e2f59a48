"""Spatially-varying blur operator, its adjoint, and the sensor response.

The forward map is

    (H u)_i = sum_b m^b_i * <u_nn(i), k^b>      (then optional subsampling)

i.e. every basis kernel is correlated with the whole image once and the
results are blended with the mixing planes.  Borders are replicate-padded,
which keeps constant images constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.special import expit

from .core import Image, KernelBasis, MixingField, check_compatible, delta_kernel
from .errors import DimensionError


@dataclass(frozen=True)
class SaturationParams:
    """Smooth sensor response and gamma: ``a`` sets the knee sharpness."""

    a: float = 50.0
    gamma: float = 2.2

    def __post_init__(self):
        if not (self.a > 0 and self.gamma > 0):
            raise ValueError(f"saturation params must be positive, got a={self.a}, gamma={self.gamma}")


@dataclass(frozen=True)
class BlurOperator:
    basis: KernelBasis
    field: MixingField
    downsample: int = 1
    boundary: str = "replicate"

    def __post_init__(self):
        check_compatible(self.basis, self.field)
        if int(self.downsample) != self.downsample or self.downsample < 1:
            raise ValueError(f"downsample factor must be a positive integer, got {self.downsample}")
        object.__setattr__(self, "downsample", int(self.downsample))
        if self.boundary != "replicate":
            raise ValueError(f"unsupported boundary {self.boundary!r}")
        a = self.downsample
        if a > 1 and (self.field.height % a or self.field.width % a):
            raise DimensionError(
                f"field {self.field.height}x{self.field.width} not divisible by {a}")

    @property
    def input_shape(self):
        return self.field.height, self.field.width

    @property
    def output_shape(self):
        a = self.downsample
        return self.field.height // a, self.field.width // a

    @classmethod
    def uniform(cls, kernel, height, width, downsample=1):
        """Spatially-invariant blur by a single kernel."""
        return cls(KernelBasis(kernel), MixingField.uniform(1, height, width), downsample)

    @classmethod
    def identity(cls, height, width, downsample=1):
        return cls.uniform(delta_kernel(1), height, width, downsample)


# ---------------------------------------------------------------------------
# plumbing
# ---------------------------------------------------------------------------

def _unwrap(x):
    """Return ``(array (C, H, W), rewrap)`` for an Image or a 2/3-D array."""
    if isinstance(x, Image):
        return x.data, lambda a, enc=None: x.with_data(a, enc)
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 2:
        return a[None], lambda r, enc=None: r[0]
    if a.ndim == 3:
        return a, lambda r, enc=None: r
    raise DimensionError(f"expected a 2-D or 3-D array, got ndim={a.ndim}")


def _pad_adjoint(p, r):
    """Adjoint of replicate padding by ``r`` on both spatial axes."""
    if r == 0:
        return p
    out = p[:, r:-r, :].copy()
    out[:, 0, :] += p[:, :r, :].sum(axis=1)
    out[:, -1, :] += p[:, -r:, :].sum(axis=1)
    res = out[:, :, r:-r].copy()
    res[:, :, 0] += out[:, :, :r].sum(axis=2)
    res[:, :, -1] += out[:, :, -r:].sum(axis=2)
    return res


def _correlate_all(basis, x):
    """Yield ``k^b`` correlated with replicate-padded ``x`` for every b."""
    r = basis.K // 2
    padded = np.pad(x, ((0, 0), (r, r), (r, r)), mode="edge")
    for k in basis.kernels:
        yield signal.correlate(padded, k[None], mode="valid")


def correlate_replicate(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Correlate each plane of ``x`` (C, H, W) with one kernel, replicate borders."""
    return next(_correlate_all(KernelBasis(kernel, renormalize=False), x))


def blur_full_res(basis: KernelBasis, field: MixingField, x: np.ndarray) -> np.ndarray:
    """Blend of per-basis correlations at full resolution, ``(C, H, W)``."""
    out = None
    for b, corr in enumerate(_correlate_all(basis, x)):
        term = field.coeffs[b] * corr
        out = term if out is None else out + term
    return out


# ---------------------------------------------------------------------------
# linear operator
# ---------------------------------------------------------------------------

def apply(op: BlurOperator, u):
    """Blur ``u`` with ``op``; returns the same container type as ``u``."""
    x, wrap = _unwrap(u)
    if x.shape[1:] != op.input_shape:
        raise DimensionError(f"image {x.shape[1:]} does not match operator {op.input_shape}")
    out = blur_full_res(op.basis, op.field, x)
    a = op.downsample
    if a > 1:
        out = out[:, ::a, ::a].copy()
    return wrap(out)


def adjoint(op: BlurOperator, y):
    """Exact adjoint of :func:`apply` (subsampling, blending, padding included)."""
    v, wrap = _unwrap(y)
    if v.shape[1:] != op.output_shape:
        raise DimensionError(f"input {v.shape[1:]} does not match operator output {op.output_shape}")
    a = op.downsample
    H, W = op.input_shape
    if a > 1:
        up = np.zeros((v.shape[0], H, W))
        up[:, ::a, ::a] = v
        v = up
    acc = None
    for b, k in enumerate(op.basis.kernels):
        term = signal.convolve(op.field.coeffs[b] * v, k[None], mode="full")
        acc = term if acc is None else acc + term
    return wrap(_pad_adjoint(acc, op.basis.K // 2))


# ---------------------------------------------------------------------------
# sensor response
# ---------------------------------------------------------------------------

def _params(params):
    return SaturationParams() if params is None else params


def response_R(z, params: SaturationParams | None = None):
    """Soft clipping ``z - log(1 + exp(a (z - 1))) / a``.

    Above the knee the equivalent ``1 - log(1 + exp(-a (z - 1))) / a`` is
    used, which neither overflows nor loses the result to cancellation.
    """
    a = _params(params).a
    x = z.data if isinstance(z, Image) else np.asarray(z, dtype=np.float64)
    t = a * (x - 1.0)
    low = x - np.log1p(np.exp(np.minimum(t, 0.0))) / a
    high = 1.0 - np.log1p(np.exp(-np.maximum(t, 0.0))) / a
    out = np.where(t > 0, high, low)
    if isinstance(z, Image):
        return z.with_data(out)
    return out if out.ndim else float(out)


def _logistic_neg(t):
    # 1 / (1 + e^t), computed without overflow
    return expit(-t)


def response_R_prime(z, params: SaturationParams | None = None):
    a = _params(params).a
    x = z.data if isinstance(z, Image) else np.asarray(z, dtype=np.float64)
    out = _logistic_neg(a * (x - 1.0))
    if isinstance(z, Image):
        return z.with_data(out)
    return out if out.ndim else float(out)


def response_R_second(z, params: SaturationParams | None = None):
    """Second derivative ``-a s (1 - s)`` with ``s`` the logistic of ``a (z - 1)``."""
    a = _params(params).a
    x = np.asarray(z, dtype=np.float64)
    s = _logistic_neg(-a * (x - 1.0))
    out = -a * s * (1.0 - s)
    return out if out.ndim else float(out)


def degrade(op: BlurOperator, u, params: SaturationParams | None = None,
            noise_sigma: float = 0.0, seed=None):
    """Full camera model: gamma-decode, blur, add noise, saturate, re-encode, clip.

    ``u`` holds display (gamma-encoded) values, possibly above 1 after
    brightness augmentation.  Noise is drawn from ``np.random.default_rng(seed)``
    and added before the response.  Clipping to ``[0, 1]`` happens last.
    """
    if noise_sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {noise_sigma}")
    p = _params(params)
    x, wrap = _unwrap(u)
    lin = np.power(np.maximum(x, 0.0), p.gamma)
    z = apply(op, lin)
    if noise_sigma > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        z = z + noise_sigma * rng.standard_normal(z.shape)
    r = response_R(z, p)
    v = np.clip(np.power(np.maximum(r, 0.0), 1.0 / p.gamma), 0.0, 1.0)
    return wrap(v, "gamma")
