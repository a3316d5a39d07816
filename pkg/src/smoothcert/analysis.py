"""Post-processing: certified-accuracy curves, linear probing, representation
Fréchet distance, and latency summaries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .certify import CertificationRecord

__all__ = [
    "CertifiedAccuracyTable",
    "certified_accuracy",
    "fit_logistic_head",
    "linear_probe",
    "fd_from_moments",
    "representation_fd",
    "latency_summary",
]


@dataclass(frozen=True)
class CertifiedAccuracyTable:
    radii: np.ndarray
    accuracy: np.ndarray  # fraction correct, non-abstaining, radius >= r

    def __post_init__(self):
        if self.radii.shape != self.accuracy.shape:
            raise ValueError("radii/accuracy length mismatch")


def certified_accuracy(records: Sequence[CertificationRecord], radii: Sequence[float]) -> CertifiedAccuracyTable:
    """Fraction of records that are correct, certified, and cover each radius."""
    if not records:
        raise ValueError("no certification records")
    radii = np.asarray(list(radii), dtype=np.float64)
    hits = np.array([r.correct for r in records])
    rads = np.array([r.radius for r in records])
    acc = np.array([(hits & (rads >= r)).mean() for r in radii])
    return CertifiedAccuracyTable(radii=radii, accuracy=acc)


def fit_logistic_head(
    reps: np.ndarray, labels: np.ndarray, num_classes: int, steps: int = 500, lr: float = 0.1
) -> tuple[np.ndarray, np.ndarray]:
    """Multinomial logistic regression by full-batch gradient descent.

    Deterministic: zero init, fixed step count. Convex, so this is as good as
    any solver at probe scale.
    """
    reps = np.asarray(reps, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(np.unique(labels)) < 2:
        raise ValueError("probe training set must contain at least two classes")
    m, d = reps.shape
    y = np.eye(num_classes)[labels]
    w = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    for _ in range(steps):
        logits = reps @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        p = e / e.sum(axis=1, keepdims=True)
        grad = (p - y) / m
        w -= lr * (reps.T @ grad)
        b -= lr * grad.sum(axis=0)
    return w, b


def head_accuracy(w: np.ndarray, b: np.ndarray, reps: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(reps @ w + b, axis=1) == labels))


def linear_probe(
    train_reps: np.ndarray,
    train_labels: np.ndarray,
    eval_sets: Mapping[float, tuple[np.ndarray, np.ndarray]],
    num_classes: int,
    steps: int = 500,
    lr: float = 0.1,
) -> dict[float, float]:
    """Train one head on clean representations, evaluate per noise level."""
    w, b = fit_logistic_head(train_reps, train_labels, num_classes, steps=steps, lr=lr)
    return {sigma: head_accuracy(w, b, reps, labels) for sigma, (reps, labels) in eval_sets.items()}


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fd_from_moments(mu_a: np.ndarray, cov_a: np.ndarray, mu_b: np.ndarray, cov_b: np.ndarray) -> float:
    """||mu_a - mu_b||^2 + tr(cov_a + cov_b - 2 (cov_a cov_b)^(1/2)).

    The cross sqrt is computed through the symmetrized product
    ``sqrt(cov_a) cov_b sqrt(cov_a)`` so the eigendecomposition stays real.
    """
    diff = np.asarray(mu_a) - np.asarray(mu_b)
    root_a = _sym_sqrt(np.asarray(cov_a))
    inner = root_a @ np.asarray(cov_b) @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_cross = np.sqrt(np.clip(vals, 0.0, None)).sum()
    fd = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_cross)
    return max(fd, 0.0)


def representation_fd(set_a: np.ndarray, set_b: np.ndarray) -> float:
    """Fréchet distance between Gaussians fitted to two representation sets."""
    a = np.asarray(set_a, dtype=np.float64)
    b = np.asarray(set_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("representation sets must be 2-D with matching width")
    if len(a) < 2 or len(b) < 2:
        raise ValueError("need at least 2 samples per set to fit a covariance")
    dim = a.shape[1]
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    cov_a = np.atleast_2d(cov_a)
    cov_b = np.atleast_2d(cov_b)
    # small runs cannot fill a full-rank covariance; shrink instead of failing
    if len(a) < 4 * dim:
        cov_a = cov_a + 1e-6 * np.eye(dim)
    if len(b) < 4 * dim:
        cov_b = cov_b + 1e-6 * np.eye(dim)
    return fd_from_moments(mu_a, cov_a, mu_b, cov_b)


def latency_summary(records: Sequence[CertificationRecord], n: int) -> dict[str, float]:
    """Wall-clock aggregates; per-noise cost divides the mean by the draw count."""
    if not records:
        raise ValueError("no certification records")
    ms = np.array([r.wall_clock_ms for r in records], dtype=np.float64)
    return {
        "mean_ms": float(ms.mean()),
        "p50_ms": float(np.percentile(ms, 50)),
        "p95_ms": float(np.percentile(ms, 95)),
        "per_noise_ms": float(ms.mean() / n),
    }
