"""Random motion-blur kernels.

Camera-shake kernels come from a 2-D damped stochastic oscillator per axis,
with natural frequencies drawn in the physiological tremor band and a small
random-walk drift.  The trajectory is re-centred on its centre of mass,
scaled, and splatted bilinearly onto a ``K x K`` grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import signal

from .core import delta_kernel

MAX_RETRIES = 20
SHRINK = 0.8
BURN_IN = 400


@dataclass(frozen=True)
class ShakeParams:
    """Parameters of one camera-shake draw.

    ``amplitude_scale`` is the RMS radius of the trajectory in units of a
    quarter kernel width, so 1.0 typically fills about half the support and
    2.0 often overflows (triggering resampling).
    """

    K: int = 33
    exposure_steps: int = 2000
    tremor_freq_hz: Tuple[float, float] = (2.0, 10.0)
    damping: float = 0.3
    amplitude_scale: float = 1.0
    seed: int = 0
    exposure_time: float = 0.5
    drift: float = 0.5

    def __post_init__(self):
        if self.K < 1 or self.K % 2 == 0:
            raise ValueError(f"K must be odd, got {self.K}")
        if self.exposure_steps < 2:
            raise ValueError("exposure_steps must be >= 2")
        lo, hi = self.tremor_freq_hz
        if not 0 < lo <= hi:
            raise ValueError(f"bad tremor band {self.tremor_freq_hz}")
        if not 0 < self.damping < 1:
            raise ValueError("damping must lie in (0, 1)")
        if self.amplitude_scale < 0 or self.exposure_time <= 0 or self.drift < 0:
            raise ValueError("amplitude, exposure time and drift must be non-negative")


def splat_bilinear(points: np.ndarray, K: int) -> np.ndarray:
    """Deposit unit total mass from ``points`` (N, 2) as (row, col) offsets.

    Offsets are relative to the centre tap.  Each point spreads its weight
    over the four surrounding taps; points must stay inside the grid.
    """
    c = K // 2
    pos = points + c
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    if base.min() < 0 or base.max() > K - 1:
        raise ValueError("trajectory leaves the kernel support")
    k = np.zeros((K + 1, K + 1))
    w = 1.0 / len(points)
    r, q = base[:, 0], base[:, 1]
    fr, fq = frac[:, 0], frac[:, 1]
    np.add.at(k, (r, q), w * (1 - fr) * (1 - fq))
    np.add.at(k, (r + 1, q), w * fr * (1 - fq))
    np.add.at(k, (r, q + 1), w * (1 - fr) * fq)
    np.add.at(k, (r + 1, q + 1), w * fr * fq)
    if k[K, :].any() or k[:, K].any():
        raise ValueError("trajectory leaves the kernel support")
    k = k[:K, :K]
    return k / k.sum()


def _oscillator_path(p: ShakeParams, rng: np.random.Generator) -> np.ndarray:
    n = p.exposure_steps
    dt = p.exposure_time / n
    lo, hi = p.tremor_freq_hz
    omega = 2 * math.pi * rng.uniform(lo, hi, size=2)
    zeta = p.damping
    noise = rng.standard_normal((BURN_IN + n, 2))
    out = np.empty((BURN_IN + n, 2))
    for axis in range(2):
        w = omega[axis]
        # semi-implicit Euler of x'' = -w^2 x - 2 zeta w x' + noise, as an IIR filter
        a = [1.0, -(2.0 - 2 * zeta * w * dt - (w * dt) ** 2), 1.0 - 2 * zeta * w * dt]
        out[:, axis] = signal.lfilter([0.0, dt], a, noise[:, axis])
    out = out[BURN_IN:]
    scale = np.sqrt(np.mean(np.sum((out - out.mean(0)) ** 2, axis=1))) or 1.0
    walk = np.cumsum(rng.standard_normal((n, 2)), axis=0) / math.sqrt(n)
    return out / scale + p.drift * walk


def _fits(points, K):
    c = K // 2
    lo = np.floor(points.min(0) + c)
    hi = np.floor(points.max(0) + c) + 1
    # bounding box of touched taps must be strictly smaller than K
    return lo.min() >= 0 and hi.max() <= K - 1 and (hi - lo + 1).max() < K


def generate_shake_kernel(p: ShakeParams) -> np.ndarray:
    """One camera-shake kernel; deterministic for a given ``p.seed``."""
    if p.amplitude_scale == 0:
        return delta_kernel(p.K)
    rng = np.random.default_rng(p.seed)
    amp = p.amplitude_scale * (p.K - 1) / 4.0
    while True:
        for _ in range(MAX_RETRIES):
            path = _oscillator_path(p, rng)
            path = path - path.mean(axis=0)
            pts = path * amp / max(np.sqrt(np.mean(np.sum(path ** 2, axis=1))), 1e-12)
            if _fits(pts, p.K):
                return splat_bilinear(pts, p.K)
        amp *= SHRINK


def generate_shake_kernels(count: int, K: int = 33, seed: int = 0, **kw) -> np.ndarray:
    """``count`` kernels as a ``(count, K, K)`` array.

    Kernel ``i`` uses the seed derived from ``(seed, i)`` so any subset can be
    regenerated independently of how the batch is split.
    """
    out = np.empty((count, K, K))
    for i in range(count):
        out[i] = generate_shake_kernel(ShakeParams(K=K, seed=derive_seed(seed, i), **kw))
    return out


def derive_seed(seed: int, *index: int) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, index)]).generate_state(1)[0])


def line_kernel(length: float, angle: float, K: int, samples_per_px: int = 64) -> np.ndarray:
    """Unit-mass straight segment of ``length`` pixels through the centre.

    The segment ``[-length/2, length/2]`` is point-sampled at midpoints and
    each sample lands in the pixel cell containing it, so axis-aligned
    segments cover whole cells exactly.  The result is symmetrised under a
    half-turn, hence ``angle`` and ``angle + pi`` give the same kernel.
    """
    if length > K:
        raise ValueError(f"line length {length} exceeds kernel size {K}")
    if length <= 1:
        return delta_kernel(K)
    n = int(math.ceil(length * samples_per_px))
    t = (np.arange(n) + 0.5) / n * length - length / 2
    d = np.array([-math.sin(angle), math.cos(angle)])  # (row, col) direction
    pts = t[:, None] * d[None, :]
    c = K // 2
    idx = np.floor(pts + c + 0.5).astype(np.int64)
    idx = np.clip(idx, 0, K - 1)
    k = np.zeros((K, K))
    np.add.at(k, (idx[:, 0], idx[:, 1]), 1.0)
    k = 0.5 * (k + k[::-1, ::-1])
    return k / k.sum()

