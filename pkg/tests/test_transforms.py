import math

import numpy as np
import pytest

from docattr.dataset.transforms import (
    MEAN,
    NOISE_STD,
    STD,
    add_gaussian_noise,
    fit_to_canvas,
    normalize_image,
    resize_u8,
)


def test_constants():
    assert MEAN == (0.485, 0.456, 0.406)
    assert STD == (0.229, 0.224, 0.225)
    assert NOISE_STD == math.sqrt(0.1)


def test_white_green_channel_value():
    out = normalize_image(np.ones((224, 224, 3), dtype=np.float32))
    assert out.shape == (3, 224, 224) and out.dtype == np.float32
    assert out[1, 0, 0] == pytest.approx((1 - 0.456) / 0.224, abs=1e-5)
    assert out[1, 0, 0] == pytest.approx(2.42857, abs=1e-5)


def test_mean_cancels():
    img = np.empty((224, 224, 3), dtype=np.float32)
    img[...] = MEAN
    np.testing.assert_allclose(normalize_image(img), 0.0, atol=1e-6)


def test_resize_is_noop_at_input_size():
    img = np.random.default_rng(0).random((224, 224, 3)).astype(np.float32)
    assert np.array_equal(fit_to_canvas(img), img)
    expected = ((img - np.array(MEAN, dtype=np.float32)) / np.array(STD, dtype=np.float32)).transpose(2, 0, 1)
    np.testing.assert_allclose(normalize_image(img), expected, atol=1e-6)


def test_aspect_preserving_fit_on_white():
    crop = np.zeros((20, 112, 3), dtype=np.uint8)  # black word-like strip, 112 wide
    out = fit_to_canvas(crop.astype(np.float32) / 255)
    ink_rows = np.flatnonzero(out[..., 0].min(axis=1) < 0.5)
    # 112 -> 224 doubles the height to 40 rows, centered vertically.
    assert len(ink_rows) == 40
    assert ink_rows[0] == (224 - 40) // 2
    assert out[0, 0, 0] == 1.0


def test_grayscale_promoted_and_zero_area_rejected():
    out = normalize_image(np.full((30, 30), 255, dtype=np.uint8))
    assert np.allclose(out[0], out[0, 0, 0]) and out.shape == (3, 224, 224)
    with pytest.raises(ValueError):
        normalize_image(np.zeros((0, 10, 3), dtype=np.uint8))


def test_resize_u8_matches_float_path():
    crop = np.random.default_rng(1).integers(0, 256, (37, 90, 3), dtype=np.uint8)
    a = resize_u8(crop).astype(np.float32) / 255
    b = fit_to_canvas(crop.astype(np.float32) / 255)
    assert np.abs(a - b).max() <= 0.5 / 255 + 1e-6


def test_noise_deterministic_and_variance():
    img = np.zeros((1000, 1000), dtype=np.float64)
    a = add_gaussian_noise(img, seed=3)
    b = add_gaussian_noise(img, seed=3)
    assert np.array_equal(a, b)
    assert abs(np.var(a - img) - 0.1) <= 0.002
    assert not np.array_equal(a, add_gaussian_noise(img, seed=4))


def test_zero_std_is_identity():
    img = np.random.default_rng(2).random((3, 8, 8)).astype(np.float32)
    out = add_gaussian_noise(img, seed=1, std=0.0)
    assert np.array_equal(out, img) and out is not img
