import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from d3rq.augment import augment_batch, pad_replicate, random_shift, sample_shifts, shift_batch


def test_pad_zero_is_identity(rng):
    img = rng.random((3, 5, 5))
    np.testing.assert_array_equal(pad_replicate(img, 0), img)


def test_pad_constant_image_stays_constant():
    out = pad_replicate(np.full((2, 3, 3), 0.25), 4)
    assert out.shape == (2, 11, 11)
    assert np.all(out == 0.25)


def test_pad_two_by_two_replicates_corners():
    img = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    expected = np.array([[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]], dtype=float)
    np.testing.assert_array_equal(pad_replicate(img, 1)[0], expected)


def test_pad_rejects_negative():
    with pytest.raises(ValueError):
        pad_replicate(np.zeros((1, 2, 2)), -1)


def test_zero_shift_is_identity(rng):
    img = rng.random((3, 12, 12))
    np.testing.assert_allclose(random_shift(img, shift=(0.0, 0.0)), img, atol=1e-6)


def test_integer_shift_on_constant_image():
    img = np.full((3, 8, 8), 0.6)
    np.testing.assert_allclose(random_shift(img, shift=(4.0, 0.0)), img, atol=1e-12)


def test_integer_shift_is_translation_of_padded_image(rng):
    img = rng.random((2, 10, 10))
    padded = pad_replicate(img, 4)
    out = random_shift(img, shift=(3.0, -2.0))
    np.testing.assert_allclose(out, padded[:, 4 - 2:4 - 2 + 10, 4 + 3:4 + 3 + 10], atol=1e-12)


def test_half_pixel_shift_on_step_edge():
    img = np.zeros((1, 6, 6))
    img[:, :, 3:] = 1.0
    out = random_shift(img, shift=(0.5, 0.0))
    # column 2 now samples halfway between columns 2 and 3
    np.testing.assert_allclose(out[0, :, 2], 0.5)
    np.testing.assert_allclose(out[0, :, 1], 0.0)
    np.testing.assert_allclose(out[0, :, 3], 1.0)


def test_shift_shared_across_channels(rng):
    base = rng.random((1, 10, 10))
    img = np.concatenate([base, base, base])
    out = random_shift(img, rng=np.random.default_rng(5))
    np.testing.assert_array_equal(out[0], out[1])
    np.testing.assert_array_equal(out[0], out[2])


def test_random_shift_requires_square():
    with pytest.raises(ValueError):
        random_shift(np.zeros((1, 4, 5)), shift=(0, 0))


def test_shift_outside_pad_rejected():
    with pytest.raises(ValueError):
        shift_batch(np.zeros((1, 1, 4, 4)), [[4.5, 0.0]], pad=4)


def test_batch_of_one_matches_single_call(rng):
    img = rng.random((3, 9, 9))
    a = augment_batch(img[None], np.random.default_rng(9))[0]
    b = random_shift(img, rng=np.random.default_rng(9))
    np.testing.assert_array_equal(a, b)


def test_same_seed_same_batch(rng):
    batch = rng.random((4, 3, 9, 9))
    a = augment_batch(batch, np.random.default_rng(3))
    b = augment_batch(batch, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)


def test_batch_images_get_independent_shifts(rng):
    img = rng.random((1, 9, 9))
    out = augment_batch(np.stack([img] * 4), np.random.default_rng(0))
    assert not np.allclose(out[0], out[1])


def test_mean_shift_near_zero():
    shifts = sample_shifts(np.random.default_rng(0), 10_000, 4)
    # uniform on [-4, 4]: sd 8/sqrt(12), standard error over 10k draws
    se = (8 / np.sqrt(12)) / np.sqrt(10_000)
    assert np.all(np.abs(shifts.mean(axis=0)) < 3 * se)
    assert shifts.min() >= -4 and shifts.max() <= 4


@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.integers(0, 4))
def test_output_is_convex_combination(seed, size, pad):
    rng = np.random.default_rng(seed)
    img = rng.random((2, size, size))
    out = random_shift(img, pad=pad, rng=rng)
    assert out.shape == img.shape
    assert out.min() >= img.min() - 1e-6 and out.max() <= img.max() + 1e-6
