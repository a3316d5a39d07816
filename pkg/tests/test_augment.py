import numpy as np
import pytest

from smoothcert.augment import AugmentConfig, augment
from smoothcert.rng import gaussian, stream


def _img(seed, shape=(3, 8, 8)):
    return np.clip(gaussian(stream(seed), shape) * 0.4, -1.0, 1.0)


IDENTITY = AugmentConfig(
    crop_prob=1.0,
    crop_scale=(1.0, 1.0),
    crop_ratio=(1.0, 1.0),
    jitter_prob=0.0,
    grayscale_prob=0.0,
    blur_prob=0.0,
    solarize_prob=0.0,
    flip_prob=0.0,
)


def test_identity_configuration():
    img = _img(0)
    out = augment(img, stream(1, "aug"), IDENTITY)
    assert np.array_equal(out, img)


def test_same_seed_same_view():
    img = _img(2)
    cfg = AugmentConfig()
    a = augment(img, stream(3, "aug"), cfg)
    b = augment(img, stream(3, "aug"), cfg)
    assert np.array_equal(a, b)


def test_different_seeds_differ():
    img = _img(4)
    cfg = AugmentConfig()
    a = augment(img, stream(5, "aug"), cfg)
    b = augment(img, stream(6, "aug"), cfg)
    assert not np.array_equal(a, b)


def test_flip_is_involution():
    img = _img(7)
    flip_only = AugmentConfig(
        crop_prob=0.0, jitter_prob=0.0, grayscale_prob=0.0, blur_prob=0.0, solarize_prob=0.0, flip_prob=1.0
    )
    once = augment(img, stream(8), flip_only)
    twice = augment(once, stream(8), flip_only)
    assert np.array_equal(twice, img)
    assert not np.array_equal(once, img)


def test_shape_preserved_under_full_pipeline():
    cfg = AugmentConfig()
    for seed in range(10):
        img = _img(100 + seed)
        out = augment(img, stream(seed, "aug"), cfg)
        assert out.shape == img.shape
        assert np.isfinite(out).all()


def test_single_channel_images_supported():
    img = _img(9, shape=(1, 8, 8))
    out = augment(img, stream(10, "aug"), AugmentConfig())
    assert out.shape == (1, 8, 8)


def test_grayscale_preserves_luminance_constant_image():
    img = np.full((3, 4, 4), 0.25)
    gray_only = AugmentConfig(
        crop_prob=0.0, jitter_prob=0.0, grayscale_prob=1.0, blur_prob=0.0, solarize_prob=0.0, flip_prob=0.0
    )
    out = augment(img, stream(11), gray_only)
    assert np.allclose(out, img)


def test_solarize_inverts_above_threshold():
    img = np.array([[[-0.5, 0.5]]])
    sol_only = AugmentConfig(
        crop_prob=0.0, jitter_prob=0.0, grayscale_prob=0.0, blur_prob=0.0, solarize_prob=1.0, flip_prob=0.0
    )
    out = augment(img, stream(12), sol_only)
    assert np.allclose(out, [[[-0.5, -0.5]]])


def test_blur_smooths():
    img = np.zeros((1, 5, 5))
    img[0, 2, 2] = 1.0
    blur_only = AugmentConfig(
        crop_prob=0.0, jitter_prob=0.0, grayscale_prob=0.0, blur_prob=1.0, solarize_prob=0.0, flip_prob=0.0
    )
    out = augment(img, stream(13), blur_only)
    assert out[0, 2, 2] < 1.0
    assert out[0, 1, 2] > 0.0


def test_probability_validation():
    with pytest.raises(ValueError):
        AugmentConfig(flip_prob=1.5)


def test_bad_shape_rejected():
    with pytest.raises(ValueError):
        augment(np.zeros((8, 8)), stream(14), AugmentConfig())
