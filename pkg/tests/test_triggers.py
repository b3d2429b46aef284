"""Trigger application: exact-overwrite contract, placement policies, persistence."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from backdoorlab import images, triggers
from backdoorlab.errors import DimensionError, PlacementError


def patched_pixels_oracle(image, patch, r, c):
    """Hand-written pixel loop: stamp patch at (r, c)."""
    out = image.copy()
    for i in range(patch.shape[0]):
        for j in range(patch.shape[1]):
            for ch in range(patch.shape[2]):
                out[r + i, c + j, ch] = patch[i, j, ch]
    return out


def test_full_overwrite():
    rng = np.random.default_rng(0)
    img = images.quantize8(rng.uniform(0, 1, (8, 8, 3)).astype(np.float32))
    patch = images.quantize8(rng.uniform(0, 1, (8, 8, 3)).astype(np.float32))
    trig = triggers.TriggerSpec(patch, placement=triggers.FIXED, location=(0, 0))
    out, loc = triggers.apply_trigger(img, trig, rng_seed=1)
    assert loc == (0, 0)
    np.testing.assert_array_equal(out, patch)


def test_random_placement_on_larger_image():
    rng = np.random.default_rng(1)
    img = images.quantize8(rng.uniform(0, 1, (64, 64, 3)).astype(np.float32))
    patch = images.quantize8(rng.uniform(0, 1, (30, 30, 3)).astype(np.float32))
    trig = triggers.TriggerSpec(patch, placement=triggers.RANDOM)
    out, (r, c) = triggers.apply_trigger(img, trig, rng_seed=7)
    np.testing.assert_array_equal(out[r:r + 30, c:c + 30], patch)
    mask = np.ones((64, 64), dtype=bool)
    mask[r:r + 30, c:c + 30] = False
    np.testing.assert_array_equal(out[mask], img[mask])
    assert img is not out  # input unmodified
    assert 0 <= r <= 34 and 0 <= c <= 34


def test_fixed_red_patch_matches_pixel_loop_oracle():
    img = np.zeros((4, 4, 3), dtype=np.float32)
    patch = np.zeros((2, 2, 3), dtype=np.float32)
    patch[..., 0] = 1.0
    trig = triggers.TriggerSpec(patch, placement=triggers.FIXED, location=(1, 1))
    out, _ = triggers.apply_trigger(img, trig)
    np.testing.assert_array_equal(out, patched_pixels_oracle(img, patch, 1, 1))
    red = {(1, 1), (1, 2), (2, 1), (2, 2)}
    for i in range(4):
        for j in range(4):
            expected = (1.0, 0.0, 0.0) if (i, j) in red else (0.0, 0.0, 0.0)
            assert tuple(out[i, j]) == expected


def test_patch_larger_than_image_errors():
    img = np.zeros((4, 4, 3), dtype=np.float32)
    trig = triggers.TriggerSpec(np.zeros((5, 5, 3), dtype=np.float32))
    with pytest.raises(DimensionError):
        triggers.apply_trigger(img, trig, rng_seed=0)


def test_fixed_out_of_bounds_errors():
    img = np.zeros((8, 8, 3), dtype=np.float32)
    trig = triggers.TriggerSpec(np.zeros((3, 3, 3), dtype=np.float32),
                                placement=triggers.FIXED, location=(6, 0))
    with pytest.raises(PlacementError):
        triggers.apply_trigger(img, trig)


def test_fixed_default_location_is_centered():
    img = np.zeros((10, 10, 3), dtype=np.float32)
    trig = triggers.TriggerSpec(np.ones((4, 4, 3), dtype=np.float32),
                                placement=triggers.FIXED)
    _, loc = triggers.apply_trigger(img, trig)
    assert loc == (3, 3)


def test_fixed_application_idempotent():
    rng = np.random.default_rng(2)
    img = images.quantize8(rng.uniform(0, 1, (12, 12, 3)).astype(np.float32))
    trig = triggers.TriggerSpec(
        images.quantize8(rng.uniform(0, 1, (4, 4, 3)).astype(np.float32)),
        placement=triggers.FIXED, location=(2, 5))
    once, _ = triggers.apply_trigger(img, trig)
    twice, _ = triggers.apply_trigger(once, trig)
    np.testing.assert_array_equal(once, twice)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 10), st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_l0_difference_bounded_by_patch_area(ph, pw, seed):
    rng = np.random.default_rng(3)
    img = images.quantize8(rng.uniform(0, 1, (12, 12, 3)).astype(np.float32))
    patch = images.quantize8(rng.uniform(0, 1, (ph, pw, 3)).astype(np.float32))
    trig = triggers.TriggerSpec(patch)
    out, _ = triggers.apply_trigger(img, trig, rng_seed=seed)
    assert np.count_nonzero(out != img) <= ph * pw * 3
    assert images.in_unit_range(out)


def test_batch_matches_per_image_application():
    rng = np.random.default_rng(4)
    batch = images.quantize8(rng.uniform(0, 1, (5, 10, 10, 3)).astype(np.float32))
    trig = triggers.TriggerSpec(
        images.quantize8(rng.uniform(0, 1, (3, 3, 3)).astype(np.float32)))
    out, placements = triggers.apply_trigger_batch(batch, trig, rng_seed=11)
    # fresh draw per image: not all placements identical
    assert len(set(placements)) > 1
    for i, (r, c) in enumerate(placements):
        np.testing.assert_array_equal(out[i, r:r + 3, c:c + 3], trig.patch)


def test_trigger_png_roundtrip_bit_exact(tmp_path):
    trig = triggers.make_random_block_patch((8, 8), seed=5, name="t0",
                                            placement=triggers.FIXED, location=(1, 2))
    triggers.save_trigger(trig, tmp_path / "t0.png")
    back = triggers.load_trigger(tmp_path / "t0.png")
    np.testing.assert_array_equal(back.patch, trig.patch)
    assert back.placement == trig.placement
    assert back.location == trig.location
    assert back.name == trig.name
