"""Segmentation-based synthetic blur dataset.

A sample blurs the background and up to three segmented objects with their
own kernels.  Each binary mask is blurred with its segment's kernel and the
blurred masks are renormalised per pixel; they become the mixing field, so
the stored ``(basis, field)`` pair regenerates the blurry image exactly.

Arrays inside a :class:`DatasetSample` are rounded to float32 precision so
that the ``VBS1`` container round-trips bit-for-bit.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from skimage.color import hsv2rgb, rgb2hsv

from . import io as vio
from .blur import BlurOperator, SaturationParams, correlate_replicate, degrade
from .core import Image, KernelBasis, MixingField, SegmentMap
from .errors import DimensionError, FormatError, VersionMismatchError
from .shake import ShakeParams, derive_seed, generate_shake_kernel

MAX_SEGMENTS = 4
MAX_OBJECTS = MAX_SEGMENTS - 1
NOISE_RANGE = (0.0, 0.02)
BRIGHTNESS_RANGE = (0.5, 1.5)

STREAK_LENGTH = (3.0, 15.0)
STREAK_PEAK = (1.5, 4.0)
STREAK_WIDTH = 1.0  # Gaussian std across the streak, pixels

VBS_MAGIC = b"VBS1"
VBS_VERSION = 1
_VBS_HEADER = struct.Struct("<I3dQ2I")


def _f32(a):
    return np.asarray(a, dtype=np.float64).astype(np.float32).astype(np.float64)


@dataclass(frozen=True)
class DatasetSample:
    sharp: Image
    blurry: Image
    basis: KernelBasis
    field: MixingField
    segments: SegmentMap
    noise_sigma: float
    params: SaturationParams
    seed: int

    @property
    def operator(self):
        return BlurOperator(self.basis, self.field)


def blend_masks(segments: SegmentMap, kernels: np.ndarray) -> np.ndarray:
    """Blur every segment mask with its kernel and renormalise per pixel.

    Where no blurred mask reaches a pixel (only possible with kernels whose
    mass sits far from the centre) the hard masks are used instead.
    """
    masks = segments.masks()
    blurred = np.stack([correlate_replicate(m[None], k)[0] for m, k in zip(masks, kernels)])
    blurred = np.maximum(blurred, 0.0)
    total = blurred.sum(axis=0)
    empty = total < 1e-12
    if empty.any():
        blurred[:, empty] = masks[:, empty]
        total = blurred.sum(axis=0)
    return blurred / total


def make_sample(sharp: Image, segments: SegmentMap, kernels: Sequence[np.ndarray],
                params: Optional[SaturationParams] = None, noise_sigma: float = 0.0,
                seed: int = 0) -> DatasetSample:
    params = SaturationParams() if params is None else params
    if segments.n_segments > MAX_SEGMENTS:
        raise ValueError(f"at most {MAX_SEGMENTS} segments (background + {MAX_OBJECTS} objects), "
                         f"got {segments.n_segments}")
    kernels = np.asarray(kernels, dtype=np.float64)
    if kernels.ndim == 2:
        kernels = kernels[None]
    if len(kernels) != segments.n_segments:
        raise ValueError(f"{len(kernels)} kernels for {segments.n_segments} segments")
    if (segments.height, segments.width) != (sharp.height, sharp.width):
        raise DimensionError("segment map and sharp image sizes differ")

    basis = KernelBasis(_f32(KernelBasis(kernels).kernels), renormalize=False)
    field = MixingField(_f32(blend_masks(segments, basis.kernels)), renormalize=False)
    sharp = sharp.with_data(_f32(sharp.data))
    blurry = degrade(BlurOperator(basis, field), sharp, params, noise_sigma, seed)
    blurry = blurry.with_data(_f32(blurry.data))
    return DatasetSample(sharp, blurry, basis, field, segments, float(noise_sigma), params, int(seed))


def regenerate(sample: DatasetSample) -> Image:
    """Blurry image recomputed from the sample's own kernels, field and seed."""
    return degrade(sample.operator, sample.sharp, sample.params, sample.noise_sigma, sample.seed)


def brightness_augment(sharp: Image, seed=None, scale: Optional[float] = None) -> Image:
    """Scale the HSV value channel by a uniform draw in ``[0.5, 1.5]``.

    No clipping: values above 1 are meant to saturate in the later
    degradation step.
    """
    if sharp.channels != 3:
        raise ValueError("brightness augmentation needs a 3-channel image")
    if scale is None:
        scale = np.random.default_rng(seed).uniform(*BRIGHTNESS_RANGE)
    hsv = rgb2hsv(np.moveaxis(np.clip(sharp.data, 0.0, None), 0, -1))
    hsv[..., 2] *= scale
    return sharp.with_data(np.moveaxis(hsv2rgb(hsv), -1, 0))


def _streak_profile(shape, center, length, angle, peak):
    H, W = shape
    rr, cc = np.mgrid[0:H, 0:W].astype(np.float64)
    d = np.array([-math.sin(angle), math.cos(angle)])
    rel_r, rel_c = rr - center[0], cc - center[1]
    t = np.clip(rel_r * d[0] + rel_c * d[1], -length / 2, length / 2)
    dist2 = (rel_r - t * d[0]) ** 2 + (rel_c - t * d[1]) ** 2
    return peak * np.exp(-dist2 / (2 * STREAK_WIDTH ** 2))


def light_streak_augment(sharp: Image, count: int, seed=None, max_tries: int = 200) -> Image:
    """Composite ``count`` bright Gaussian streaks with peaks in ``[1.5, 4]``.

    Streaks are placed so their footprints do not touch, hence each yields
    one connected region above 1.
    """
    if sharp.channels != 3:
        raise ValueError("light streaks need a 3-channel image")
    if count <= 0:
        return sharp
    rng = np.random.default_rng(seed)
    H, W = sharp.height, sharp.width
    out = sharp.data.copy()
    boxes = []
    placed = 0
    for _ in range(max_tries):
        if placed == count:
            break
        length = rng.uniform(*STREAK_LENGTH)
        angle = rng.uniform(0, math.pi)
        peak = rng.uniform(*STREAK_PEAK)
        half = length / 2 + 3 * STREAK_WIDTH
        center = (rng.uniform(half, H - half), rng.uniform(half, W - half)) if min(H, W) > 2 * half else None
        if center is None:
            continue
        box = (center[0] - half, center[0] + half, center[1] - half, center[1] + half)
        if any(not (box[1] + 2 < b[0] or b[1] + 2 < box[0] or box[3] + 2 < b[2] or b[3] + 2 < box[2])
               for b in boxes):
            continue
        boxes.append(box)
        out = np.maximum(out, _streak_profile((H, W), center, length, angle, peak)[None])
        placed += 1
    if placed < count:
        raise ValueError(f"could only place {placed} of {count} streaks in a {H}x{W} image")
    return sharp.with_data(out)


def select_segments(labels: np.ndarray, max_objects: int = MAX_OBJECTS) -> SegmentMap:
    """Keep the ``max_objects`` largest non-zero labels; everything else is background."""
    labels = np.asarray(labels, dtype=np.int64)
    ids, counts = np.unique(labels[labels != 0], return_counts=True)
    keep = ids[np.argsort(-counts, kind="stable")[:max_objects]]
    out = np.zeros_like(labels)
    for new, old in enumerate(sorted(keep), start=1):
        out[labels == old] = new
    return SegmentMap(out, len(keep) + 1)


def synthesize(sharp: Image, labels: Optional[np.ndarray], K: int = 33, seed: int = 0,
               light_streaks: bool = False,
               params: Optional[SaturationParams] = None) -> DatasetSample:
    """Draw every random ingredient of one sample from ``seed`` and build it."""
    rng = np.random.default_rng(seed)
    if labels is None:
        labels = np.zeros((sharp.height, sharp.width), dtype=np.int64)
    segments = select_segments(labels)
    kernels = [generate_shake_kernel(ShakeParams(K=K, amplitude_scale=rng.uniform(0.2, 1.0),
                                                 seed=derive_seed(seed, s)))
               for s in range(segments.n_segments)]
    sigma = float(rng.uniform(*NOISE_RANGE))
    if sharp.channels == 3:
        sharp = brightness_augment(sharp, rng)
        if light_streaks and rng.random() < 0.5:
            sharp = light_streak_augment(sharp, int(rng.integers(1, 6)), rng)
    return make_sample(sharp, segments, kernels, params, sigma, derive_seed(seed, 1 << 20))


# --- VBS1 container ---------------------------------------------------------

def pack_sample(sample: DatasetSample) -> bytes:
    enc = (sample.sharp.encoding == "gamma") | ((sample.blurry.encoding == "gamma") << 1)
    seg = sample.segments
    head = _VBS_HEADER.pack(VBS_VERSION, sample.noise_sigma, sample.params.a, sample.params.gamma,
                            sample.seed, enc, seg.n_segments)
    labels = struct.pack("<2I", seg.height, seg.width) + seg.labels.astype("<i4").tobytes()
    return b"".join([VBS_MAGIC, head, vio.pack_vbi1(sample.sharp), vio.pack_vbi1(sample.blurry),
                     vio.pack_vbk1(sample.basis, sample.field), labels])


def unpack_sample(buf: bytes) -> DatasetSample:
    magic, off = vio._take(buf, 0, 4, "VBS1 magic")
    if magic != VBS_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {VBS_MAGIC!r}")
    raw, off = vio._take(buf, off, _VBS_HEADER.size, "VBS1 header")
    version, sigma, a, gamma, seed, enc, n_seg = _VBS_HEADER.unpack(raw)
    if version != VBS_VERSION:
        raise VersionMismatchError(f"VBS1 version {version}, this reader supports {VBS_VERSION}")
    sharp, off = vio.unpack_vbi1(buf, off, "gamma" if enc & 1 else "linear")
    blurry, off = vio.unpack_vbi1(buf, off, "gamma" if enc & 2 else "linear")
    basis, field, off = vio.unpack_vbk1(buf, off)
    if field is None:
        raise FormatError("VBS1 kernel block has no mixing field")
    raw, off = vio._take(buf, off, 8, "label header")
    H, W = struct.unpack("<2I", raw)
    raw, off = vio._take(buf, off, 4 * H * W, "labels")
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after VBS1 data")
    labels = np.frombuffer(raw, dtype="<i4").reshape(H, W)
    return DatasetSample(sharp, blurry, basis, field, SegmentMap(labels, n_seg), sigma,
                         SaturationParams(a, gamma), seed)


def write_sample(path, sample: DatasetSample):
    with open(path, "wb") as f:
        f.write(pack_sample(sample))


def read_sample(path) -> DatasetSample:
    with open(path, "rb") as f:
        return unpack_sample(f.read())

