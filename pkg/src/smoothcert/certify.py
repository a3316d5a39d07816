"""Randomized-smoothing certification with exact binomial bounds.

The procedure is the standard two-stage one: a small selection round picks
the candidate class, a large estimation round feeds a one-sided
Clopper-Pearson lower bound on its probability, and the certified radius is
``sigma * Phi^-1(p_lower)`` — the two-class radius with the runner-up
probability taken as the complement. Abstention is an explicit outcome, not
an exception. A halfspace classifier with a closed-form smoothed probability
serves as the analytic oracle for end-to-end validation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .model import Encoder, as_constants, classify
from .rng import gaussian, stream
from .stats import binom_two_sided_pvalue, clopper_pearson_lower, inv_normal_cdf, normal_cdf

__all__ = [
    "ABSTAIN",
    "CertifyConfig",
    "CertificationRecord",
    "BaseClassifier",
    "ConstantClassifier",
    "HalfspaceClassifier",
    "ModelClassifier",
    "certified_radius",
    "sample_counts",
    "certify",
    "predict",
    "certify_dataset",
]

ABSTAIN = -1


@dataclass(frozen=True)
class CertifyConfig:
    sigma: float = 0.25
    n0: int = 100
    n: int = 10000
    alpha: float = 0.001
    batch: int = 1000

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.n0 < 1 or self.n < self.n0:
            raise ValueError("need n0 >= 1 and n >= n0")
        if not (0.0 < self.alpha < 1.0):
            raise ValueError("alpha must be in (0, 1)")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")


@dataclass(frozen=True)
class CertificationRecord:
    sample_id: int
    label: int  # ground truth, -1 when unknown
    predicted: int  # class index or ABSTAIN
    abstain: bool
    pa_lower: float
    radius: float
    wall_clock_ms: float

    @property
    def correct(self) -> bool:
        return not self.abstain and self.predicted == self.label


class BaseClassifier:
    """Deterministic hard classifier over image-shaped arrays."""

    num_classes: int

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class ConstantClassifier(BaseClassifier):
    def __init__(self, cls: int, num_classes: int):
        if not (0 <= cls < num_classes):
            raise ValueError("class outside range")
        self.cls = int(cls)
        self.num_classes = int(num_classes)

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        return np.full(len(x), self.cls, dtype=np.int64)


class HalfspaceClassifier(BaseClassifier):
    """sign(w . x + b) as a two-class oracle with exact smoothed probability.

    Under isotropic Gaussian smoothing the probability of the positive class
    is ``Phi((w . x + b) / (sigma * ||w||))``, so every statistic downstream
    has a closed form to compare against. Predictions are invariant to
    positive rescaling of (w, b).
    """

    num_classes = 2

    def __init__(self, w: np.ndarray, b: float = 0.0):
        w = np.asarray(w, dtype=np.float64)
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            raise ValueError("w must be nonzero")
        self.w = w
        self.b = float(b)
        self._norm = norm

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        flat = x.reshape(len(x), -1)
        return (flat @ self.w.reshape(-1) + self.b >= 0.0).astype(np.int64)

    def margin(self, x: np.ndarray) -> float:
        """Signed distance of x to the decision boundary."""
        return float((x.reshape(-1) @ self.w.reshape(-1) + self.b) / self._norm)

    def exact_smoothed_p(self, x: np.ndarray, sigma: float) -> float:
        """True smoothed probability of the positive class at x."""
        if sigma <= 0:
            raise ValueError("sigma must be > 0")
        return normal_cdf(self.margin(x) / sigma)


class ModelClassifier(BaseClassifier):
    """Trained encoder plus head; the time input is the smoothing noise level."""

    def __init__(self, encoder: Encoder, theta: Mapping[str, np.ndarray], omega: Mapping[str, np.ndarray], sigma: float):
        self.encoder = encoder
        self.theta = as_constants(theta)
        self.omega = as_constants(omega)
        self.t = float(sigma)
        self.num_classes = encoder.config.num_classes

    def predict_batch(self, x: np.ndarray) -> np.ndarray:
        with ad.no_grad():
            logits = classify(self.omega, self.encoder(self.theta, Tensor(x), self.t))
        # argmax takes the lowest index on ties
        return np.argmax(logits.data, axis=1).astype(np.int64)


def certified_radius(sigma: float, p_a: float, p_b: float | None = None) -> float:
    """Two-class radius ``sigma/2 * (Phi^-1(p_a) - Phi^-1(p_b))``.

    With the runner-up probability defaulted to ``1 - p_a`` this collapses to
    the one-sided form ``sigma * Phi^-1(p_a)`` used in reports.
    """
    if p_b is None:
        p_b = 1.0 - p_a
    return 0.5 * sigma * (inv_normal_cdf(p_a) - inv_normal_cdf(p_b))


def sample_counts(
    f: BaseClassifier,
    x: np.ndarray,
    sigma: float,
    n: int,
    rng: np.random.Generator,
    batch: int = 1000,
) -> np.ndarray:
    """Histogram of f(x + sigma * eps) over n i.i.d. draws, evaluated in batches."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    counts = np.zeros(f.num_classes, dtype=np.int64)
    remaining = n
    while remaining > 0:
        m = min(batch, remaining)
        eps = gaussian(rng, (m,) + x.shape)
        preds = f.predict_batch(x[None] + sigma * eps)
        counts += np.bincount(preds, minlength=f.num_classes)
        remaining -= m
    return counts


def certify(
    f: BaseClassifier,
    x: np.ndarray,
    config: CertifyConfig,
    rng: np.random.Generator,
    sample_id: int = 0,
    label: int = -1,
) -> CertificationRecord:
    """Two-stage certification of one input; abstains when the bound is <= 1/2."""
    start = time.perf_counter()
    counts0 = sample_counts(f, x, config.sigma, config.n0, rng, config.batch)
    c_hat = int(np.argmax(counts0))
    counts = sample_counts(f, x, config.sigma, config.n, rng, config.batch)
    pa_lower = clopper_pearson_lower(int(counts[c_hat]), config.n, config.alpha)
    elapsed_ms = (time.perf_counter() - start) * 1000.0
    if pa_lower <= 0.5:
        return CertificationRecord(sample_id, label, ABSTAIN, True, pa_lower, 0.0, elapsed_ms)
    radius = config.sigma * inv_normal_cdf(pa_lower)
    return CertificationRecord(sample_id, label, c_hat, False, pa_lower, radius, elapsed_ms)


def predict(f: BaseClassifier, x: np.ndarray, config: CertifyConfig, rng: np.random.Generator) -> int:
    """Smoothed prediction with a two-sided exact binomial test on the top class.

    Ties between counts resolve to the lower class index; abstains when the
    top-two split is not significant at level alpha.
    """
    counts = sample_counts(f, x, config.sigma, config.n, rng, config.batch)
    order = np.argsort(-counts, kind="stable")
    if len(order) < 2:
        return int(order[0])
    top, runner = int(order[0]), int(order[1])
    k1, k2 = int(counts[top]), int(counts[runner])
    if binom_two_sided_pvalue(k1, k1 + k2) > config.alpha:
        return ABSTAIN
    return top


def certify_dataset(
    f: BaseClassifier,
    images: np.ndarray,
    labels: Sequence[int] | None,
    config: CertifyConfig,
    seed: int,
) -> list[CertificationRecord]:
    """Certify each sample with its own derived stream keyed by sample id."""
    records = []
    for i, x in enumerate(images):
        label = int(labels[i]) if labels is not None else -1
        rng = stream(seed, "certify", i)
        records.append(certify(f, x, config, rng, sample_id=i, label=label))
    return records
