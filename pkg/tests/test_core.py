import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_field, random_kernels
from varblur.core import (Image, KernelBasis, MixingField, SegmentMap, box_kernel, delta_kernel,
                          kernel_norm_map, synth_kernel_field, synth_pixel_kernel, validate)
from varblur.errors import DimensionError, InvariantError


def test_single_kernel_basis_returns_itself(rng):
    k = random_kernels(rng, 1, 5)
    basis = KernelBasis(k)
    field = MixingField.uniform(1, 4, 6)
    for i in range(24):
        np.testing.assert_array_equal(synth_pixel_kernel(basis, field, i), basis.kernels[0])


def test_half_half_delta_and_shifted_delta():
    d0 = delta_kernel(3)
    d1 = np.zeros((3, 3))
    d1[1, 2] = 1.0  # one pixel right of the centre
    basis = KernelBasis(np.stack([d0, d1]))
    field = MixingField.constant([0.5, 0.5], 2, 2)
    k = synth_pixel_kernel(basis, field, (1, 1))
    expected = np.zeros((3, 3))
    expected[1, 1] = expected[1, 2] = 0.5
    np.testing.assert_array_equal(k, expected)


def test_flat_and_pair_index_agree(rng):
    basis = KernelBasis(random_kernels(rng, 3, 5))
    field = MixingField(random_field(rng, 3, 4, 7))
    for r in range(4):
        for c in range(7):
            np.testing.assert_array_equal(synth_pixel_kernel(basis, field, (r, c)),
                                          synth_pixel_kernel(basis, field, r * 7 + c))


@given(B=st.integers(1, 4), K=st.sampled_from([1, 3, 5, 7]), H=st.integers(1, 9),
       W=st.integers(1, 9), seed=st.integers(0, 2**32 - 1))
def test_synth_kernels_are_convex(B, K, H, W, seed):
    rng = np.random.default_rng(seed)
    basis = KernelBasis(random_kernels(rng, B, K))
    field = MixingField(random_field(rng, B, H, W))
    ks = synth_kernel_field(basis, field)
    assert ks.shape == (H, W, K, K)
    assert ks.min() >= 0
    np.testing.assert_allclose(ks.sum(axis=(2, 3)), 1.0, atol=1e-6)


def test_norm_map_delta_and_box():
    for kern, val in [(delta_kernel(5), 1.0), (box_kernel(3, 5), 1.0 / 3.0)]:
        m = kernel_norm_map(KernelBasis(kern), MixingField.uniform(1, 6, 5))
        np.testing.assert_allclose(m, val, rtol=0, atol=1e-15)


@given(B=st.integers(1, 4), K=st.sampled_from([1, 3, 5, 7]), H=st.integers(1, 32),
       W=st.integers(1, 32), seed=st.integers(0, 2**32 - 1))
def test_norm_map_equals_per_pixel_loop(B, K, H, W, seed):
    rng = np.random.default_rng(seed)
    basis = KernelBasis(random_kernels(rng, B, K))
    field = MixingField(random_field(rng, B, H, W))
    m = kernel_norm_map(basis, field)
    oracle = np.empty((H, W))
    for r in range(H):
        for c in range(W):
            k = synth_pixel_kernel(basis, field, (r, c))
            oracle[r, c] = np.sqrt(np.sum(k.ravel() ** 2))
    np.testing.assert_array_equal(m, oracle)
    assert np.all((m > 0) & (m <= 1 + 1e-12))


def test_mixed_delta_box_norm_map():
    basis = KernelBasis(np.stack([delta_kernel(3), box_kernel(3)]))
    t = np.linspace(0, 1, 8)[None, :].repeat(5, 0)
    field = MixingField(np.stack([t, 1 - t]))
    m = kernel_norm_map(basis, field)
    # centre tap t + (1-t)/9, eight others (1-t)/9
    centre = t + (1 - t) / 9
    np.testing.assert_allclose(m, np.sqrt(centre ** 2 + 8 * ((1 - t) / 9) ** 2), atol=1e-15)


def test_dimension_mismatch():
    basis = KernelBasis(np.stack([delta_kernel(3)] * 2))
    with pytest.raises(DimensionError):
        synth_pixel_kernel(basis, MixingField.uniform(3, 2, 2), 0)
    with pytest.raises(DimensionError):
        kernel_norm_map(basis, MixingField.uniform(1, 2, 2))


def test_out_of_bounds_pixel():
    basis = KernelBasis(delta_kernel(3))
    with pytest.raises(IndexError):
        synth_pixel_kernel(basis, MixingField.uniform(1, 2, 2), (2, 0))


def test_validate_negative_kernel_entry():
    k = np.full((1, 3, 3), 1 / 8)
    k[0, 0, 0] = 0.25
    k[0, 2, 1] = -0.125  # total stays 1
    rep = validate(k, "kernels")
    assert not rep.ok and rep.location == (0, 2, 1)
    with pytest.raises(InvariantError) as ei:
        KernelBasis(k)
    assert ei.value.report.location == (0, 2, 1)


def test_validate_field_column_sum():
    m = np.full((2, 3, 4), 0.5)
    m[:, 1, 2] = 0.45
    rep = validate(m, "field")
    assert not rep.ok and rep.location == (1, 2)
    with pytest.raises(InvariantError):
        MixingField(m)


def test_validate_ok_on_valid_objects(rng):
    assert validate(KernelBasis(random_kernels(rng, 2, 3))).ok
    assert validate(MixingField(random_field(rng, 2, 3, 3))).ok
    assert validate(Image(rng.random((3, 4, 4)))).ok
    assert validate(SegmentMap(np.array([[0, 1], [1, 2]]))).ok


def test_constructor_rejections():
    with pytest.raises(InvariantError):
        KernelBasis(np.full((1, 2, 2), 0.25))  # even K
    with pytest.raises(InvariantError):
        KernelBasis(np.full((1, 3, 3), 0.2))  # sum 1.8
    with pytest.raises(InvariantError):
        Image(np.array([[np.nan, 0.0]]))
    with pytest.raises(InvariantError):
        Image(np.zeros((2, 3, 3)))  # two channels
    with pytest.raises(InvariantError):
        SegmentMap(np.array([[0, 3]]), 2)
    with pytest.raises(ValueError):
        Image(np.zeros((1, 2, 2)), "srgb")


def test_near_unit_sums_renormalised_exactly(rng):
    k = random_kernels(rng, 2, 5) * (1 + 5e-7)
    basis = KernelBasis(k)
    np.testing.assert_allclose(basis.kernels.sum(axis=(1, 2)), 1.0, atol=1e-15)
    m = random_field(rng, 3, 4, 4) * (1 - 5e-7)
    np.testing.assert_allclose(MixingField(m).coeffs.sum(axis=0), 1.0, atol=1e-15)


def test_types_are_read_only(rng):
    basis = KernelBasis(random_kernels(rng, 1, 3))
    with pytest.raises(ValueError):
        basis.kernels[0, 0, 0] = 1.0
    img = Image(rng.random((1, 2, 2)))
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1.0


def test_segment_sizes_and_masks():
    labels = np.array([[0, 0, 1], [2, 2, 2]])
    s = SegmentMap(labels)
    assert s.n_segments == 3
    np.testing.assert_array_equal(s.segment_sizes, [2, 1, 3])
    masks = s.masks()
    np.testing.assert_array_equal(masks.sum(axis=0), 1)
    np.testing.assert_array_equal(masks[2], labels == 2)


def test_image_accessors():
    img = Image(np.zeros((5, 7)), "gamma")
    assert (img.channels, img.height, img.width) == (1, 5, 7)
    assert img.with_data(np.ones((1, 5, 7))).encoding == "gamma"
