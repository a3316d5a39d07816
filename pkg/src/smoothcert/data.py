"""Dataset provisioning: synthetic blob classes and the CIFAR-10 binary format.

Pixels use the [-1, 1] convention everywhere; the CIFAR mapping from bytes is
``v / 127.5 - 1`` and rounds back to the exact original integers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .augment import _gaussian_blur3
from .rng import stream

__all__ = ["Dataset", "synthetic_blobs", "read_cifar10_binary", "stride_subset", "save_dataset", "load_dataset"]

_CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (M, C, H, W) float64
    labels: np.ndarray  # (M,) int64
    num_classes: int

    def __post_init__(self):
        if self.images.ndim != 4 or len(self.labels) != len(self.images):
            raise ValueError("images must be (M, C, H, W) aligned with labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("labels outside [0, num_classes)")
        if not np.isfinite(self.images).all():
            raise ValueError("non-finite pixels")

    def __len__(self) -> int:
        return len(self.labels)


def synthetic_blobs(
    num_classes: int,
    per_class: int,
    shape: tuple[int, int, int] = (1, 8, 8),
    margin: float = 4.0,
    seed: int = 0,
) -> Dataset:
    """Class templates on a sphere of radius ``margin`` plus intra-class noise.

    Templates are low-pass filtered white noise renormalized to the sphere, so
    neighbouring pixels correlate and crops stay informative. Intra-class
    noise is isotropic with std ``0.1 * margin``.
    """
    if margin <= 0:
        raise ValueError("margin must be > 0")
    c, h, w = shape
    if min(c, h, w) < 1:
        raise ValueError(f"invalid shape {shape}")
    rng = stream(seed, "blobs")
    templates = []
    for _ in range(num_classes):
        raw = rng.standard_normal((c, h, w))
        smooth = _gaussian_blur3(_gaussian_blur3(raw, 1.0), 1.0)
        flat = smooth.reshape(-1)
        templates.append((flat / np.linalg.norm(flat) * margin).reshape(shape))
    images = np.zeros((num_classes * per_class, c, h, w))
    labels = np.zeros(num_classes * per_class, dtype=np.int64)
    noise_std = 0.1 * margin
    for cls in range(num_classes):
        lo = cls * per_class
        images[lo : lo + per_class] = templates[cls] + noise_std * rng.standard_normal((per_class, c, h, w))
        labels[lo : lo + per_class] = cls
    order = rng.permutation(len(labels))
    return Dataset(images=images[order], labels=labels[order], num_classes=num_classes)


def read_cifar10_binary(path: str | Path) -> Dataset:
    raw = np.fromfile(str(path), dtype=np.uint8)
    if raw.size == 0 or raw.size % _CIFAR_RECORD:
        raise ValueError(f"file size {raw.size} is not a multiple of {_CIFAR_RECORD} bytes")
    records = raw.reshape(-1, _CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        raise ValueError(f"label byte {labels.max()} > 9")
    pixels = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64)
    images = pixels / 127.5 - 1.0
    return Dataset(images=images, labels=labels, num_classes=10)


def pixels_to_bytes(images: np.ndarray) -> np.ndarray:
    """Inverse of the [-1, 1] mapping; exact on byte-born values."""
    return np.rint((np.asarray(images) + 1.0) * 127.5).astype(np.uint8)


def stride_subset(dataset: Dataset, count: int) -> Dataset:
    """Deterministic evaluation subset: every (M // count)-th sample."""
    m = len(dataset)
    if count <= 0 or m == 0:
        raise ValueError("need count > 0 and a non-empty dataset")
    count = min(count, m)
    idx = (m // count) * np.arange(count)
    return Dataset(images=dataset.images[idx], labels=dataset.labels[idx], num_classes=dataset.num_classes)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    # write through a file object so numpy cannot append an extension
    with open(path, "wb") as fh:
        np.savez(fh, images=dataset.images, labels=dataset.labels, num_classes=dataset.num_classes)


def load_dataset(path: str | Path) -> Dataset:
    with np.load(str(path)) as z:
        return Dataset(images=z["images"], labels=z["labels"], num_classes=int(z["num_classes"]))
