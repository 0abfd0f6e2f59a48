"""Sharpness and distortion metrics.

Reference-free: blur strength (re-blur variation ratio), CPBD (cumulative
probability of blur detection) and the sharpness index (TV response to
random-phase-like convolution).  Reference-based: PSNR/SSIM after an
exhaustive integer-translation search with least-squares intensity scaling.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage
from scipy.special import log_ndtr
from skimage.color import rgb2gray
from skimage.metrics import structural_similarity

from .core import Image
from .errors import DimensionError

PSNR_SENTINEL_DB = 99.0

# CPBD constants
BETA_JNB = 3.6
P_JNB = 0.63
CPBD_BLOCK = 64
EDGE_BLOCK_FRACTION = 0.002
CONTRAST_SPLIT = 50
# ramps stop at steps below half a grey level (0-255 scale), as in 8-bit data
RAMP_STEP_TOL = 0.5

_EPS = 1e-10


def to_gray(img) -> np.ndarray:
    """2-D float array; 3-channel input is converted by luminance."""
    a = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    if a.ndim == 3:
        if a.shape[0] == 1:
            return a[0]
        if a.shape[0] == 3:
            return rgb2gray(np.moveaxis(a, 0, -1))
        raise DimensionError(f"expected 1 or 3 channels, got {a.shape[0]}")
    if a.ndim != 2:
        raise DimensionError(f"expected an image, got ndim={a.ndim}")
    return a


# ---------------------------------------------------------------------------
# blur strength
# ---------------------------------------------------------------------------

def _axis_derivative(image, axis):
    d = ndimage.correlate1d(image, [-1.0, 0.0, 1.0], axis=axis, mode="reflect")
    for other in range(image.ndim):
        if other != axis:
            d = ndimage.correlate1d(d, [0.25, 0.5, 0.25], axis=other, mode="reflect")
    return np.abs(d)


def blur_strength(img, h: int = 11) -> float:
    """0 for a sharp image, 1 for a maximally blurred one.

    Re-blurs with a length-``h`` box along each axis and measures how much
    of the neighbour variation disappears; the worst axis is reported.  A
    constant image scores 1.
    """
    g = to_gray(img)
    if min(g.shape) < h:
        raise ValueError(f"image {g.shape} smaller than filter size {h}")
    crop = tuple(slice(2, s - 1) for s in g.shape)
    scores = []
    for ax in range(g.ndim):
        blurred = ndimage.uniform_filter1d(g, h, axis=ax)
        d_orig = np.maximum(_EPS, _axis_derivative(g, ax))
        d_blur = np.maximum(_EPS, _axis_derivative(blurred, ax))
        lost = np.maximum(0.0, d_orig - d_blur)
        total = np.sum(d_orig[crop])
        scores.append(abs(total - np.sum(lost[crop])) / total)
    return float(max(scores))


# ---------------------------------------------------------------------------
# CPBD
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CPBDResult:
    value: float
    n_edges: int

    @property
    def no_edges(self):
        return self.n_edges == 0


def _runs_ending(step):
    """``out[..., j]`` = number of consecutive True in ``step`` ending at ``j``."""
    out = np.zeros(step.shape, dtype=np.int64)
    acc = np.zeros(step.shape[:-1], dtype=np.int64)
    for j in range(step.shape[-1]):
        acc = (acc + 1) * step[..., j]
        out[..., j] = acc
    return out


def _ramp_extent(step):
    """Steps a monotone ramp extends left and right of every pixel.

    ``step[..., j]`` says whether moving from pixel j to j+1 continues the
    ramp.  Returns ``left + right`` with one entry per pixel.
    """
    n = step.shape[-1] + 1
    left = np.zeros(step.shape[:-1] + (n,), dtype=np.int64)
    right = np.zeros_like(left)
    left[..., 1:] = _runs_ending(step)
    right[..., :-1] = _runs_ending(step[..., ::-1])[..., ::-1]
    return left + right


def _edge_widths_rows(g, rising):
    """Width of the monotone ramp through every pixel, walking along rows.

    ``rising`` selects, per pixel, whether the ramp increases left to right.
    """
    if g.shape[1] < 2:
        return np.zeros(g.shape, dtype=np.int64)
    diff = np.diff(g, axis=1)
    return np.where(rising, _ramp_extent(diff > RAMP_STEP_TOL), _ramp_extent(diff < -RAMP_STEP_TOL))


def _detect_edges(g):
    gy = ndimage.sobel(g, axis=0, mode="reflect")
    gx = ndimage.sobel(g, axis=1, mode="reflect")
    mag2 = gx * gx + gy * gy
    strong = mag2 > 4.0 * np.mean(mag2)
    horiz = np.abs(gx) >= np.abs(gy)
    # thin to one pixel across the edge along the dominant gradient axis
    m = np.pad(mag2, 1, mode="constant")
    c = m[1:-1, 1:-1]
    peak_x = (c >= m[1:-1, :-2]) & (c > m[1:-1, 2:])
    peak_y = (c >= m[:-2, 1:-1]) & (c > m[2:, 1:-1])
    edges = strong & np.where(horiz, peak_x, peak_y)
    return edges, gx, gy, horiz


def cpbd_details(img) -> CPBDResult:
    g = to_gray(img) * 255.0
    edges, gx, gy, horiz = _detect_edges(g)
    w_row = _edge_widths_rows(g, gx > 0)
    w_col = _edge_widths_rows(g.T, (gy > 0).T).T
    widths = np.where(horiz, w_row, w_col).astype(np.float64)

    H, W = g.shape
    blur_probs = []
    for r0 in range(0, H, CPBD_BLOCK):
        for c0 in range(0, W, CPBD_BLOCK):
            blk = (slice(r0, r0 + CPBD_BLOCK), slice(c0, c0 + CPBD_BLOCK))
            e = edges[blk]
            if np.count_nonzero(e) <= EDGE_BLOCK_FRACTION * e.size:
                continue
            contrast = g[blk].max() - g[blk].min()
            w_jnb = 5.0 if contrast <= CONTRAST_SPLIT else 3.0
            w = widths[blk][e]
            blur_probs.append(1.0 - np.exp(-((w / w_jnb) ** BETA_JNB)))
    if not blur_probs:
        return CPBDResult(0.0, 0)
    p = np.concatenate(blur_probs)
    return CPBDResult(float(np.mean(p <= P_JNB)), int(p.size))


def cpbd(img) -> float:
    """Fraction of edges whose blur-detection probability is at most 0.63."""
    return cpbd_details(img).value


# ---------------------------------------------------------------------------
# sharpness index
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SharpnessResult:
    value: float
    stderr: float
    tv: float
    mu: float
    sigma: float
    realizations: int

    @property
    def ok(self):
        return math.isfinite(self.value)


def tv_periodic(u):
    """Anisotropic total variation with periodic differences (last two axes)."""
    return (np.abs(np.roll(u, -1, axis=-1) - u).sum(axis=(-2, -1))
            + np.abs(np.roll(u, -1, axis=-2) - u).sum(axis=(-2, -1)))


def periodic_component(u):
    """Periodic part of the periodic-plus-smooth decomposition of ``u``.

    Removes the jumps a periodic extension would create at the borders, which
    would otherwise count as sharp structure under periodic convolution.
    """
    u = np.asarray(u, dtype=np.float64)
    M, N = u.shape
    v = np.zeros_like(u)
    v[0, :] += u[-1, :] - u[0, :]
    v[-1, :] += u[0, :] - u[-1, :]
    v[:, 0] += u[:, -1] - u[:, 0]
    v[:, -1] += u[:, 0] - u[:, -1]
    q = np.cos(2 * np.pi * np.arange(M) / M)[:, None]
    r = np.cos(2 * np.pi * np.arange(N) / N)[None, :]
    den = 2 * q + 2 * r - 4
    den[0, 0] = 1.0
    s_hat = np.fft.fft2(v) / den
    s_hat[0, 0] = 0.0
    return u - np.fft.ifft2(s_hat).real


def sharpness_index(img, realizations: int = 32, seed=None, batch: int = 8) -> SharpnessResult:
    """``-log10 Phi((mu - TV(u)) / sigma)`` with Monte-Carlo moments.

    ``mu`` and ``sigma`` are the mean and std of ``TV(u * W)`` where ``W`` is
    Gaussian white noise of variance ``1/(MN)`` and ``*`` is periodic
    convolution, both taken on the periodic component of the image.  ``stderr`` is the delta-method Monte-Carlo error of the
    index.  A constant image gives ``value = nan`` (``ok`` is False).
    """
    if realizations < 2:
        raise ValueError("need at least two realizations")
    u = periodic_component(to_gray(img))
    M, N = u.shape
    rng = np.random.default_rng(seed)
    U = np.fft.fft2(u)
    samples = []
    for start in range(0, realizations, batch):
        n = min(batch, realizations - start)
        noise = rng.standard_normal((n, M, N)) / math.sqrt(M * N)
        conv = np.fft.ifft2(U[None] * np.fft.fft2(noise)).real
        samples.append(tv_periodic(conv))
    samples = np.concatenate(samples)
    mu = float(samples.mean())
    sigma = float(samples.std(ddof=1))
    tv = float(tv_periodic(u))
    if not sigma > 0:
        return SharpnessResult(math.nan, math.nan, tv, mu, sigma, realizations)
    t = (mu - tv) / sigma
    # log10 of the upper Gaussian tail, stable far into the tail
    value = float(-log_ndtr(-t) / math.log(10))
    mills = math.exp(_log_pdf(t) - float(log_ndtr(-t)))
    var_t = 1.0 / realizations + t * t / (2.0 * (realizations - 1))
    stderr = mills / math.log(10) * math.sqrt(var_t)
    return SharpnessResult(value, stderr, tv, mu, sigma, realizations)


def _log_pdf(t):
    return -0.5 * t * t - 0.5 * math.log(2 * math.pi)


# ---------------------------------------------------------------------------
# distortion metrics
# ---------------------------------------------------------------------------

def _planes(img):
    a = img.data if isinstance(img, Image) else np.asarray(img, dtype=np.float64)
    return a[None] if a.ndim == 2 else a


def psnr(a, b, data_range: float = 1.0) -> float:
    a, b = _planes(a), _planes(b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(data_range ** 2 / mse)


def ssim(a, b, data_range: float = 1.0) -> float:
    """Gaussian-window (sigma 1.5, 11x11) SSIM averaged over channels."""
    a, b = _planes(a), _planes(b)
    if a.shape != b.shape:
        raise DimensionError(f"shapes differ: {a.shape} vs {b.shape}")
    if min(a.shape[1:]) < 11:
        raise ValueError("SSIM needs at least 11x11 pixels")
    return float(structural_similarity(a, b, data_range=data_range, channel_axis=0,
                                       gaussian_weights=True, sigma=1.5,
                                       use_sample_covariance=False))


@dataclass(frozen=True)
class RegistrationResult:
    psnr: float
    ssim: float
    shift: Tuple[int, int]
    scale: float


def _overlap(restored, gt, dx, dy):
    """Views where ``restored[y + dy, x + dx]`` is compared with ``gt[y, x]``."""
    _, H, W = gt.shape
    gy = slice(max(0, -dy), H - max(0, dy))
    gx = slice(max(0, -dx), W - max(0, dx))
    ry = slice(gy.start + dy, gy.stop + dy)
    rx = slice(gx.start + dx, gx.stop + dx)
    return restored[:, ry, rx], gt[:, gy, gx]


def _ls_scale(r, g):
    den = float(np.vdot(r, r))
    return float(np.vdot(r, g)) / den if den > 0 else 1.0


def registered_psnr_ssim(restored, gt, max_shift: int = 10) -> RegistrationResult:
    """Best PSNR over integer translations in ``[-max_shift, max_shift]^2``.

    At every shift the restored overlap is multiplied by the least-squares
    scale onto the ground truth.  The returned ``shift = (dx, dy)`` means the
    restored image is the ground truth moved right by ``dx`` and down by
    ``dy``.  Shifts are visited by increasing distance, so ties keep the
    smallest displacement.
    """
    r_all, g_all = _planes(restored), _planes(gt)
    if r_all.shape != g_all.shape:
        raise DimensionError(f"shapes differ: {r_all.shape} vs {g_all.shape}")
    shifts = sorted(((dx, dy) for dy in range(-max_shift, max_shift + 1)
                     for dx in range(-max_shift, max_shift + 1)),
                    key=lambda s: (abs(s[0]) + abs(s[1]), abs(s[1]), s[1], s[0]))
    best = None
    for dx, dy in shifts:
        r, g = _overlap(r_all, g_all, dx, dy)
        if r.size == 0:
            continue
        s = _ls_scale(r, g)
        p = psnr(s * r, g)
        if best is None or p > best[0]:
            best = (p, (dx, dy), s)
        if p == math.inf:
            break
    p, (dx, dy), s = best
    r, g = _overlap(r_all, g_all, dx, dy)
    return RegistrationResult(p, ssim(s * r, g), (dx, dy), s)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

REPORT_COLUMNS = ("name", "psnr", "ssim", "blur_strength", "cpbd", "sharpness_index",
                  "shift_x", "shift_y", "intensity_scale")


@dataclass
class MetricReport:
    name: str = ""
    psnr: Optional[float] = None
    ssim: Optional[float] = None
    blur_strength: Optional[float] = None
    cpbd: Optional[float] = None
    sharpness_index: Optional[float] = None
    shift_x: Optional[int] = None
    shift_y: Optional[int] = None
    intensity_scale: Optional[float] = None

    def to_record(self) -> dict:
        """Dict for file output; infinite PSNR is written as the 99 dB sentinel."""
        rec = asdict(self)
        if rec["psnr"] is not None and math.isinf(rec["psnr"]):
            rec["psnr"] = PSNR_SENTINEL_DB
        return {k: rec[k] for k in REPORT_COLUMNS}

    @classmethod
    def from_record(cls, rec: dict) -> "MetricReport":
        return cls(**{k: rec.get(k) for k in REPORT_COLUMNS})


def evaluate(restored, gt=None, max_shift: int = 10, realizations: int = 32, seed=0,
             name: str = "") -> MetricReport:
    """All metrics for one image; reference metrics only when ``gt`` is given."""
    rep = MetricReport(name=name)
    rep.blur_strength = blur_strength(restored)
    rep.cpbd = cpbd(restored)
    si = sharpness_index(restored, realizations, seed)
    rep.sharpness_index = si.value if si.ok else None
    if gt is not None:
        reg = registered_psnr_ssim(restored, gt, max_shift)
        rep.psnr, rep.ssim, rep.intensity_scale = reg.psnr, reg.ssim, reg.scale
        rep.shift_x, rep.shift_y = reg.shift
    return rep
