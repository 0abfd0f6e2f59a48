import struct

import numpy as np
import pytest

from conftest import random_field, random_kernels
from varblur import io as vio
from varblur.core import Image, KernelBasis, MixingField
from varblur.errors import FormatError, TruncatedFileError


def _f32(a):
    return a.astype(np.float32).astype(np.float64)


def test_vbk1_layout_by_hand(rng):
    basis = KernelBasis(_f32(random_kernels(rng, 2, 3)), renormalize=False)
    field = MixingField(_f32(random_field(rng, 2, 4, 5)), renormalize=False)
    buf = vio.pack_vbk1(basis, field)
    assert buf[:4] == b"VBK1"
    assert struct.unpack("<5I", buf[4:24]) == (2, 3, 4, 5, 1)
    k = np.frombuffer(buf[24:24 + 4 * 18], "<f4").reshape(2, 3, 3)
    np.testing.assert_array_equal(k, basis.kernels)
    m = np.frombuffer(buf[24 + 72:], "<f4").reshape(2, 4, 5)
    np.testing.assert_array_equal(m, field.coeffs)


def test_vbk1_round_trip_files(tmp_path, rng):
    basis = KernelBasis(_f32(random_kernels(rng, 3, 5)), renormalize=False)
    field = MixingField(_f32(random_field(rng, 3, 6, 7)), renormalize=False)
    p = tmp_path / "k.vbk1"
    vio.write_vbk1(p, basis, field)
    b2, f2 = vio.read_vbk1(p)
    np.testing.assert_array_equal(b2.kernels, basis.kernels)
    np.testing.assert_array_equal(f2.coeffs, field.coeffs)
    vio.write_vbk1(p, basis)
    b3, f3 = vio.read_vbk1(p)
    assert f3 is None
    np.testing.assert_array_equal(b3.kernels, basis.kernels)


def test_vbk1_errors(tmp_path, rng):
    basis = KernelBasis(random_kernels(rng, 1, 3))
    buf = vio.pack_vbk1(basis)
    with pytest.raises(FormatError):
        vio.unpack_vbk1(b"XXXX" + buf[4:])
    with pytest.raises(TruncatedFileError):
        vio.unpack_vbk1(buf[:-3])
    p = tmp_path / "x.vbk1"
    p.write_bytes(buf + b"\0")
    with pytest.raises(FormatError):
        vio.read_vbk1(p)


def test_vbi1_round_trip(tmp_path, rng):
    img = Image(_f32(rng.random((3, 5, 4))))
    p = tmp_path / "a.vbi1"
    vio.write_vbi1(p, img)
    raw = p.read_bytes()
    assert raw[:4] == b"VBI1" and struct.unpack("<3I", raw[4:16]) == (5, 4, 3)
    np.testing.assert_array_equal(vio.read_vbi1(p).data, img.data)
    with pytest.raises(TruncatedFileError):
        vio.unpack_vbi1(raw[:20])


@pytest.mark.parametrize("bitdepth", [8, 16])
@pytest.mark.parametrize("channels", [1, 3])
def test_png_round_trip(tmp_path, rng, bitdepth, channels):
    maxval = (1 << bitdepth) - 1
    q = rng.integers(0, maxval + 1, (channels, 6, 9))
    img = Image(q / maxval, "gamma")
    p = tmp_path / "a.png"
    vio.write_png(p, img, bitdepth)
    back = vio.read_png(p)
    assert back.shape == img.shape and back.encoding == "gamma"
    np.testing.assert_array_equal(np.rint(back.data * maxval), q)


def test_png_writes_are_byte_identical(tmp_path, rng):
    img = Image(rng.random((3, 8, 8)))
    vio.write_png(tmp_path / "a.png", img)
    vio.write_png(tmp_path / "b.png", img)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_label_png_round_trip(tmp_path, rng):
    labels = rng.integers(0, 5, (7, 11))
    vio.write_label_png(tmp_path / "l.png", labels)
    np.testing.assert_array_equal(vio.read_label_png(tmp_path / "l.png"), labels)
    with pytest.raises(ValueError):
        vio.write_label_png(tmp_path / "bad.png", np.array([[300]]))


def test_float32_overflow_rejected():
    with pytest.raises(FormatError):
        vio.pack_vbi1(Image(np.array([[1e39]])))
