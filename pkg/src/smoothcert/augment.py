"""Deterministic pixel-space augmentations for contrastive view pairs.

Minimal reimplementations: bilinear crop-resize, jitter via a [0,1] value
space (HSV only where hue/saturation apply), separable 3x3 Gaussian blur,
threshold solarize, horizontal flip. Images are (C, H, W) float64 in the
[-1, 1] convention; every transform preserves shape and is a pure function
of the generator state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["AugmentConfig", "augment"]


@dataclass(frozen=True)
class AugmentConfig:
    crop_prob: float = 1.0
    crop_scale: tuple[float, float] = (0.08, 1.0)
    crop_ratio: tuple[float, float] = (0.75, 4.0 / 3.0)
    jitter_prob: float = 0.8
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.2
    hue: float = 0.1
    grayscale_prob: float = 0.2
    blur_prob: float = 0.1
    blur_sigma: tuple[float, float] = (0.1, 2.0)
    solarize_prob: float = 0.2
    solarize_threshold: float = 0.0
    flip_prob: float = 0.5

    def __post_init__(self):
        for name in ("crop_prob", "jitter_prob", "grayscale_prob", "blur_prob", "solarize_prob", "flip_prob"):
            p = getattr(self, name)
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {p}")


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[None, :, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bot * wy


def _random_resized_crop(img: np.ndarray, rng, scale, ratio) -> np.ndarray:
    c, h, w = img.shape
    area = h * w
    for _ in range(10):
        target = area * rng.uniform(scale[0], scale[1])
        log_r = rng.uniform(math.log(ratio[0]), math.log(ratio[1]))
        r = math.exp(log_r)
        cw = int(round(math.sqrt(target * r)))
        ch = int(round(math.sqrt(target / r)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            if (ch, cw, top, left) == (h, w, 0, 0):
                return img.copy()
            crop = img[:, top : top + ch, left : left + cw]
            return _bilinear_resize(crop, h, w)
    return img.copy()


def _to_unit(img: np.ndarray) -> np.ndarray:
    return (img + 1.0) * 0.5


def _from_unit(img: np.ndarray) -> np.ndarray:
    return img * 2.0 - 1.0


def _luminance(img01: np.ndarray) -> np.ndarray:
    if img01.shape[0] == 3:
        r, g, b = img01
        return 0.299 * r + 0.587 * g + 0.114 * b
    return img01.mean(axis=0)


def _rgb_to_hsv(img01: np.ndarray) -> np.ndarray:
    r, g, b = np.clip(img01, 0.0, 1.0)
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    diff = mx - mn
    safe = np.where(diff == 0, 1.0, diff)
    hr = np.where(mx == r, ((g - b) / safe) % 6.0, 0.0)
    hg = np.where((mx == g) & (mx != r), (b - r) / safe + 2.0, 0.0)
    hb = np.where((mx == b) & (mx != r) & (mx != g), (r - g) / safe + 4.0, 0.0)
    hue = np.where(diff == 0, 0.0, (hr + hg + hb) / 6.0)
    sat = np.where(mx == 0, 0.0, diff / np.where(mx == 0, 1.0, mx))
    return np.stack([hue, sat, mx])


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv
    h6 = (h % 1.0) * 6.0
    i = np.floor(h6).astype(int) % 6
    f = h6 - np.floor(h6)
    p = v * (1 - s)
    q = v * (1 - f * s)
    t = v * (1 - (1 - f) * s)
    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b])


def _color_jitter(img: np.ndarray, rng, cfg: AugmentConfig) -> np.ndarray:
    out01 = _to_unit(img)
    if cfg.brightness > 0:
        u = rng.uniform(max(0.0, 1.0 - cfg.brightness), 1.0 + cfg.brightness)
        out01 = out01 * u
    if cfg.contrast > 0:
        u = rng.uniform(max(0.0, 1.0 - cfg.contrast), 1.0 + cfg.contrast)
        mean = _luminance(out01).mean()
        out01 = mean + u * (out01 - mean)
    if img.shape[0] == 3:
        if cfg.saturation > 0:
            u = rng.uniform(max(0.0, 1.0 - cfg.saturation), 1.0 + cfg.saturation)
            gray = _luminance(out01)[None]
            out01 = gray + u * (out01 - gray)
        if cfg.hue > 0:
            delta = rng.uniform(-cfg.hue, cfg.hue)
            hsv = _rgb_to_hsv(np.clip(out01, 0.0, 1.0))
            hsv[0] = (hsv[0] + delta) % 1.0
            out01 = _hsv_to_rgb(hsv)
    else:
        # consume the draws single-channel jitter cannot use, keeping streams aligned
        if cfg.saturation > 0:
            rng.uniform(0.0, 1.0)
        if cfg.hue > 0:
            rng.uniform(0.0, 1.0)
    return _from_unit(out01)


def _gaussian_blur3(img: np.ndarray, sigma: float) -> np.ndarray:
    k = np.exp(-np.array([1.0, 0.0, 1.0]) / (2.0 * sigma * sigma))
    k /= k.sum()
    padded = np.pad(img, ((0, 0), (1, 1), (1, 1)), mode="edge")
    out = k[0] * padded[:, :-2, 1:-1] + k[1] * padded[:, 1:-1, 1:-1] + k[2] * padded[:, 2:, 1:-1]
    padded = np.pad(out, ((0, 0), (0, 0), (1, 1)), mode="edge")
    return k[0] * padded[:, :, :-2] + k[1] * padded[:, :, 1:-1] + k[2] * padded[:, :, 2:]


def augment(x0: np.ndarray, rng: np.random.Generator, cfg: AugmentConfig) -> np.ndarray:
    """One augmented view; transforms fire in a fixed order with their probabilities."""
    img = np.asarray(x0, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"expected (C, H, W), got shape {img.shape}")
    if cfg.crop_prob > 0 and rng.uniform() < cfg.crop_prob:
        img = _random_resized_crop(img, rng, cfg.crop_scale, cfg.crop_ratio)
    if cfg.jitter_prob > 0 and rng.uniform() < cfg.jitter_prob:
        img = _color_jitter(img, rng, cfg)
    if cfg.grayscale_prob > 0 and rng.uniform() < cfg.grayscale_prob:
        img = np.broadcast_to(_luminance(_to_unit(img))[None], img.shape)
        img = _from_unit(np.array(img))
    if cfg.blur_prob > 0 and rng.uniform() < cfg.blur_prob:
        sigma = rng.uniform(cfg.blur_sigma[0], cfg.blur_sigma[1])
        img = _gaussian_blur3(img, sigma)
    if cfg.solarize_prob > 0 and rng.uniform() < cfg.solarize_prob:
        img = np.where(img >= cfg.solarize_threshold, -img, img)
    if cfg.flip_prob > 0 and rng.uniform() < cfg.flip_prob:
        img = img[:, :, ::-1].copy()
    return np.ascontiguousarray(img)
