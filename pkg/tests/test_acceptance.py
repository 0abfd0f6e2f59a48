"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``ACCEPTANCE <n> PASS|FAIL`` line with the
measured figures, then asserts.
"""

import math
import time

import numpy as np
import pytest
from skimage import color, data, filters, transform

from conftest import random_field, random_kernels
from test_blur import brute_force_apply
from test_losses import brute_kernel_loss
from varblur.admm import (AdmmSchedule, AdmmState, deconvolve, saturated_gradient,
                          z_update_saturated)
from varblur.blur import BlurOperator, adjoint, apply, response_R, response_R_prime
from varblur.blurmap import average_precision, blur_map, blur_scores, detection_ap
from varblur.cli import main
from varblur.core import (Image, KernelBasis, MixingField, SegmentMap, box_kernel,
                          delta_kernel, validate)
from varblur.losses import SegmentWeights, kernel_loss, reblur_loss, restoration_loss
from varblur.metrics import (blur_strength, cpbd, psnr, registered_psnr_ssim,
                             sharpness_index)
from varblur.sbdd import make_sample, pack_sample, regenerate, unpack_sample
from varblur import io as vio
from varblur.shake import ShakeParams, generate_shake_kernel


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}")
    return emit


def test_01_operator_matches_brute_force(report):
    rng = np.random.default_rng(1)
    worst, elapsed = 0.0, 0.0
    for _ in range(100):
        H, W = rng.integers(1, 33, 2)
        B, K = rng.integers(1, 5), 2 * rng.integers(0, 4) + 1
        C = rng.integers(1, 4)
        basis = KernelBasis(random_kernels(rng, B, K))
        field = MixingField(random_field(rng, B, H, W))
        x = rng.random((C, H, W))
        t = time.perf_counter()
        y = apply(BlurOperator(basis, field), x)
        elapsed += time.perf_counter() - t
        worst = max(worst, np.abs(y - brute_force_apply(basis, field, x)).max())
    ok = worst <= 1e-6 and elapsed < 5.0
    report(1, ok, f"max abs err {worst:.2e}, apply time {elapsed:.3f} s")
    assert ok


def test_02_adjoint_dot_product(report):
    rng = np.random.default_rng(2)
    worst = 0.0
    for a in (1, 2, 4):
        for _ in range(50):
            H, W = a * rng.integers(1, 9, 2)
            B, K = rng.integers(1, 5), 2 * rng.integers(0, 4) + 1
            op = BlurOperator(KernelBasis(random_kernels(rng, B, K)),
                              MixingField(random_field(rng, B, H, W)), a)
            x = rng.standard_normal((2, H, W))
            y = rng.standard_normal((2,) + op.output_shape)
            lhs, rhs = np.vdot(apply(op, x), y), np.vdot(x, adjoint(op, y))
            worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    ok = worst <= 1e-8
    report(2, ok, f"max relative mismatch {worst:.2e} over 150 tests")
    assert ok


def test_03_saturated_stationarity(report):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        H, W, B = 8, 8, rng.integers(1, 4)
        op = BlurOperator(KernelBasis(random_kernels(rng, B, 5)),
                          MixingField(random_field(rng, B, H, W)))
        st = AdmmState(rng.uniform(0, 1.3, (1, H, W)), rng.uniform(0.3, 1.3, (1, H, W)),
                       0.05 * rng.standard_normal((1, H, W)))
        y = rng.uniform(0, 1, (1, H, W))
        sigma, mu, L_z = rng.uniform(0.005, 0.05), rng.uniform(1, 200), rng.uniform(1e2, 1e5)
        Hx = apply(op, st.x)
        z = z_update_saturated(st, op, y, mu, L_z, sigma, Hx=Hx)
        g = saturated_gradient(z, st, y, mu, L_z, sigma, Hx)
        worst = max(worst, np.abs(g).max() / (L_z + mu))
    zs = np.linspace(-0.5, 2.0, 2001)
    h = 1e-6
    fd = (response_R(zs + h) - response_R(zs - h)) / (2 * h)
    fd_err = np.abs(fd - response_R_prime(zs)).max()
    ok = worst < 1e-10 and fd_err <= 1e-6
    report(3, ok, f"max scaled gradient {worst:.2e}, R' finite-difference err {fd_err:.2e}")
    assert ok


def _exp_images():
    return [color.rgb2gray(data.astronaut()), data.camera() / 255.0,
            color.rgb2gray(data.coffee()), color.rgb2gray(data.chelsea())]


def test_04_deconvolution_improves(report):
    imgs = _exp_images()
    gains, monotone, elapsed = [], 0, 0.0
    for s in range(10):
        rng = np.random.default_rng(s)
        small = transform.resize(imgs[s % 4], (128, 128), anti_aliasing=True)
        r, c = rng.integers(0, 64, 2)
        u = small[r:r + 64, c:c + 64]
        k = generate_shake_kernel(ShakeParams(K=15, seed=s))
        op = BlurOperator.uniform(k, 64, 64)
        y = apply(op, u) + 0.005 * rng.standard_normal(u.shape)
        t = time.perf_counter()
        res = deconvolve(y, op, AdmmSchedule.geometric(0.005))
        elapsed += time.perf_counter() - t
        gains.append(psnr(res.x, u) - psnr(np.clip(y, 0, 1), u))
        monotone += bool(np.all(np.diff(res.residuals) <= 0))
    ok = min(gains) >= 1.5 and monotone >= 9 and elapsed < 30
    report(4, ok, f"min gain {min(gains):.2f} dB, mean {np.mean(gains):.2f} dB, "
                  f"monotone {monotone}/10, {elapsed:.1f} s")
    assert ok


def test_05_metric_monotonicity(report):
    u = color.rgb2gray(data.rocket())
    blurred = [filters.gaussian(u, s) for s in (0.5, 1, 2, 4)]
    bs = [blur_strength(b) for b in blurred]
    cp = [cpbd(b) for b in blurred]
    si = [sharpness_index(b, realizations=32, seed=7) for b in blurred]
    bs_ok = all(b > a for a, b in zip(bs, bs[1:]))
    cp_ok = all(b < a for a, b in zip(cp, cp[1:]))
    si_ok = all(a.value - b.value > 2 * math.hypot(a.stderr, b.stderr) for a, b in zip(si, si[1:]))
    ok = bs_ok and cp_ok and si_ok
    report(5, ok, "BS " + " ".join(f"{v:.3f}" for v in bs)
           + " | CPBD " + " ".join(f"{v:.4f}" for v in cp)
           + " | SI " + " ".join(f"{r.value:.1f}+-{r.stderr:.1f}" for r in si))
    assert ok


def test_06_registration(report):
    gt = transform.resize(data.camera() / 255.0, (96, 96), anti_aliasing=True)
    r1 = registered_psnr_ssim(np.roll(gt, (-2, 3), axis=(0, 1)), gt)
    r2 = registered_psnr_ssim(0.5 * gt, gt)
    exact = r1.shift == (3, -2) and r2.scale == pytest.approx(2.0, rel=1e-12) and r2.shift == (0, 0)
    rng = np.random.default_rng(6)
    better = 0
    for _ in range(20):
        dy, dx = rng.integers(-6, 7, 2)
        restored = rng.uniform(0.6, 1.4) * np.roll(gt, (dy, dx), axis=(0, 1))
        restored = restored + rng.uniform(0, 0.05) * rng.standard_normal(gt.shape)
        better += registered_psnr_ssim(restored, gt).psnr >= psnr(restored, gt)
    ok = exact and better == 20
    report(6, ok, f"shift {r1.shift}, scale {r2.scale:.6f}, registered >= unregistered {better}/20")
    assert ok


def test_07_sbdd_self_consistency(report):
    rng = np.random.default_rng(7)
    src = transform.resize(data.astronaut() / 255.0, (40, 40), anti_aliasing=True)
    worst, fields_ok, bitwise = 0.0, 0, 0
    for i in range(20):
        lab = np.zeros((40, 40), int)
        n_obj = rng.integers(0, 4)
        for o in range(1, n_obj + 1):
            r, c = rng.integers(0, 30, 2)
            lab[r:r + rng.integers(4, 11), c:c + rng.integers(4, 11)] = o
        seg = SegmentMap(lab)
        kernels = [generate_shake_kernel(ShakeParams(K=9, seed=100 * i + s,
                                                     amplitude_scale=rng.uniform(0.2, 1)))
                   for s in range(seg.n_segments)]
        sharp = Image(np.moveaxis(src, -1, 0) * rng.uniform(0.5, 1.5), "gamma")
        s = make_sample(sharp, seg, kernels, noise_sigma=0.0, seed=i)
        worst = max(worst, reblur_loss(s.blurry, regenerate(s), SegmentWeights.from_segments(seg)))
        fields_ok += validate(s.field).ok
        buf = pack_sample(s)
        back = unpack_sample(buf)
        bitwise += (pack_sample(back) == buf
                    and np.array_equal(back.blurry.data, s.blurry.data)
                    and np.array_equal(back.field.coeffs, s.field.coeffs)
                    and np.array_equal(back.basis.kernels, s.basis.kernels))
    ok = worst <= 1e-8 and fields_ok == 20 and bitwise == 20
    report(7, ok, f"max reblur loss {worst:.2e}, valid fields {fields_ok}/20, "
                  f"bitwise round-trips {bitwise}/20")
    assert ok


def test_08_blur_segmentation(report):
    half_aps = []
    for K, blur in ((9, box_kernel(9)), (15, generate_shake_kernel(ShakeParams(K=15, seed=8)))):
        basis = KernelBasis(np.stack([delta_kernel(K), blur]))
        for axis in (0, 1):
            mask = np.zeros((32, 32))
            if axis == 0:
                mask[:16] = 1
            else:
                mask[:, 16:] = 1
            half_aps.append(detection_ap(basis, MixingField(np.stack([1 - mask, mask])), mask))
    rng = np.random.default_rng(8)
    basis = KernelBasis(np.stack([delta_kernel(9), box_kernel(9), generate_shake_kernel(ShakeParams(K=9, seed=1))]))
    field = MixingField(random_field(rng, 3, 32, 32))
    scores = blur_scores(blur_map(basis, field))
    mask = (scores + 0.1 * rng.standard_normal(scores.shape)) > np.median(scores)
    base = average_precision(scores, mask)
    diffs = []
    for _ in range(10):
        # random strictly increasing piecewise-linear map on [0, 1]
        knots = np.cumsum(rng.uniform(0.01, 1.0, 12))
        f = lambda v: np.interp(v, np.linspace(0, 1, 12), knots)
        diffs.append(abs(average_precision(f(scores), mask) - base))
    ok = all(a == 1.0 for a in half_aps) and max(diffs) == 0.0
    report(8, ok, f"half-blurred AP {half_aps}, base AP {base:.4f}, "
                  f"max change under monotone maps {max(diffs):.1e}")
    assert ok


def test_09_loss_identities(report):
    rng = np.random.default_rng(9)
    seg = SegmentMap(rng.integers(0, 3, (8, 8)))
    w = SegmentWeights.from_segments(seg)
    v = rng.random((3, 8, 8))
    basis = KernelBasis(random_kernels(rng, 3, 5))
    field = MixingField(random_field(rng, 3, 8, 8))
    exact_gt = np.stack([[np.tensordot(field.coeffs[:, r, c], basis.kernels, 1) for c in range(8)]
                         for r in range(8)])
    vanish = (reblur_loss(v, v, w) == 0 and restoration_loss(v, v) == 0
              and kernel_loss(basis, field, exact_gt, w) < 1e-28)
    worst = 0.0
    for _ in range(10):
        gt = rng.random((8, 8, 5, 5))
        worst = max(worst, abs(kernel_loss(basis, field, gt, w) - brute_kernel_loss(basis, field, gt, w.w)))
    sizes = {l: np.sum(seg.labels == l) for l in np.unique(seg.labels)}
    rule = all(w.w[r, c] == 1.0 / sizes[seg.labels[r, c]] for r in range(8) for c in range(8))
    ok = vanish and worst <= 1e-10 and rule
    report(9, ok, f"losses vanish {vanish}, kernel-loss oracle err {worst:.1e}, "
                  f"inverse-size weights exact {rule}")
    assert ok


def _pipeline(root, seed):
    """Run every subcommand into ``root`` and return the produced files' bytes."""
    root.mkdir()
    sharp_dir = root / "sharp"
    sharp_dir.mkdir()
    src = transform.resize(data.astronaut() / 255.0, (48, 48), anti_aliasing=True)
    vio.write_png(sharp_dir / "a.png", np.moveaxis(src, -1, 0))
    mask = np.zeros((48, 48), int)
    mask[:, 24:] = 1
    vio.write_label_png(root / "mask.png", mask)
    s = str(seed)
    cmds = [
        ["gen-kernels", "--count", "3", "--k", "9", "--seed", s, "--jobs", "2", "--out", root / "k.vbk1"],
        ["synth", "--sharp-dir", sharp_dir, "--out-dir", root / "ds", "--count", "2", "--k", "9",
         "--light-streaks", "--seed", s, "--jobs", "2"],
        ["blur", "--input", root / "ds" / "00000_sharp.png", "--kernels", root / "ds" / "00000.vbk1",
         "--sigma", "0.01", "--seed", s, "--out", root / "b.png"],
        ["deblur", "--input", root / "b.png", "--kernels", root / "ds" / "00000.vbk1", "--iters", "4",
         "--saturated", "--out", root / "r.png", "--diag", root / "diag.csv"],
        ["metrics", "--restored", root / "r.png", "--gt", root / "ds" / "00000_sharp.png",
         "--si-realizations", "8", "--seed", s, "--json", root / "m" / "r.json", "--csv", root / "m.csv"],
        ["detect", "--kernels", root / "ds" / "00000.vbk1", "--gt", root / "mask.png", "--out", root / "map.png"],
        ["report", "--dir", root / "m", "--html", root / "report.html"],
    ]
    (root / "m").mkdir()
    codes = [main([str(a) for a in c]) for c in cmds]
    files = sorted(p for p in root.rglob("*") if p.is_file())
    return codes, {str(p.relative_to(root)): p.read_bytes() for p in files}


def test_10_cli_reproducibility(report, tmp_path):
    codes_a, a = _pipeline(tmp_path / "a", 11)
    codes_b, b = _pipeline(tmp_path / "b", 11)
    same = sorted(k for k in a if a[k] == b.get(k))
    ok = codes_a == codes_b == [0] * 7 and a.keys() == b.keys() and len(same) == len(a)
    report(10, ok, f"exit codes {codes_a}, byte-identical files {len(same)}/{len(a)}")
    assert ok
