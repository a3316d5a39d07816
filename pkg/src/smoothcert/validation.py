"""Input validation helpers shared by the estimator API."""

from __future__ import annotations

import numpy as np

__all__ = ["check_images", "check_labels"]


def check_images(X, image_shape: tuple[int, int, int] | None = None) -> tuple[np.ndarray, tuple[int, int, int]]:
    """Coerce X to (M, C, H, W) float64.

    4-D input is used as-is; 2-D input is reshaped with ``image_shape``
    (required in that case). Non-finite values are rejected.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        if image_shape is None:
            raise ValueError("2-D input needs image_shape=(C, H, W) to reshape")
        c, h, w = image_shape
        if X.shape[1] != c * h * w:
            raise ValueError(f"cannot reshape {X.shape[1]} features into {image_shape}")
        X = X.reshape(len(X), c, h, w)
    elif X.ndim == 4:
        if image_shape is not None and X.shape[1:] != tuple(image_shape):
            raise ValueError(f"images of shape {X.shape[1:]} != declared {tuple(image_shape)}")
    else:
        raise ValueError(f"expected 2-D or 4-D input, got ndim={X.ndim}")
    if not np.isfinite(X).all():
        raise ValueError("input contains NaN or Inf")
    return X, tuple(X.shape[1:])


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or len(y) != n_samples:
        raise ValueError(f"labels must be 1-D of length {n_samples}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(y == y.astype(np.int64)):
            raise ValueError("labels must be integers")
    return y.astype(np.int64)
