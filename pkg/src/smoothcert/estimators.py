"""scikit-learn style front door for the pipeline.

``TrajectoryRepresentationLearner`` is the self-supervised pre-trainer with a
``transform`` that returns encoder representations, so it drops into sklearn
pipelines next to any downstream linear model. ``SmoothedCertifiedClassifier``
is the full train-then-certify stack behind ``fit`` / ``predict``; smoothed
predictions may abstain, reported as the label ``-1``.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import autodiff as ad
from .autodiff import Tensor
from .certify import ABSTAIN, CertifyConfig, ModelClassifier, certify_dataset, predict as smoothed_predict
from .data import Dataset
from .finetune import FinetuneConfig, run_finetune
from .model import EncoderConfig, as_constants
from .pretrain import PretrainConfig, run_pretrain
from .rng import stream
from .schedule import ScheduleConfig
from .validation import check_images, check_labels

__all__ = ["TrajectoryRepresentationLearner", "SmoothedCertifiedClassifier"]


def _encoder_config(image_shape, arch, width, depth, heads, patch_size, num_classes) -> EncoderConfig:
    return EncoderConfig(
        input_shape=tuple(image_shape),
        arch=arch,
        width=width,
        depth=depth,
        heads=heads,
        patch_size=patch_size,
        mlp_hidden=width,
        projector_hidden=2 * width,
        projector_out=max(16, width // 2),
        num_classes=num_classes,
    )


class TrajectoryRepresentationLearner(BaseEstimator, TransformerMixin):
    """Self-supervised encoder over noising trajectories; transform -> representations.

    ``fit`` ignores ``y``. ``transform`` encodes at ``transform_noise_level``
    (0 means the clean endpoint of the time grid) without adding noise, so
    the output is deterministic.
    """

    def __init__(
        self,
        image_shape=None,
        arch: str = "mlp",
        width: int = 64,
        depth: int = 2,
        heads: int = 4,
        patch_size: int = 4,
        iters: int = 300,
        batch_size: int = 32,
        lr: float = 1e-3,
        tau: float = 0.2,
        transform_noise_level: float = 0.0,
        seed: int = 0,
    ):
        self.image_shape = image_shape
        self.arch = arch
        self.width = width
        self.depth = depth
        self.heads = heads
        self.patch_size = patch_size
        self.iters = iters
        self.batch_size = batch_size
        self.lr = lr
        self.tau = tau
        self.transform_noise_level = transform_noise_level
        self.seed = seed

    def fit(self, X, y=None):
        X, shape = check_images(X, self.image_shape)
        dataset = Dataset(images=X, labels=np.zeros(len(X), dtype=np.int64), num_classes=1)
        model_cfg = _encoder_config(shape, self.arch, self.width, self.depth, self.heads, self.patch_size, 2)
        pre_cfg = PretrainConfig(tau=self.tau, batch_size=self.batch_size, iters=self.iters, lr=self.lr)
        sched_cfg = ScheduleConfig()
        state, _ = run_pretrain(dataset, model_cfg, pre_cfg, sched_cfg, self.seed)
        self.state_ = state
        self.input_shape_ = shape
        self.t0_ = sched_cfg.t_min
        return self

    def transform(self, X) -> np.ndarray:
        if not hasattr(self, "state_"):
            raise NotFittedError("fit before transform")
        X, _ = check_images(X, self.input_shape_)
        t = self.t0_ if self.transform_noise_level <= 0 else float(self.transform_noise_level)
        theta = as_constants({k: v.data for k, v in self.state_.params.theta.items()})
        with ad.no_grad():
            return self.state_.encoder(theta, Tensor(X), t).data


class SmoothedCertifiedClassifier(BaseEstimator, ClassifierMixin):
    """Noise-consistent training plus randomized-smoothing inference.

    ``fit`` optionally pre-trains the encoder on the unlabeled images before
    supervised fine-tuning at noise level ``sigma``; ``predict`` runs the
    abstention-aware smoothed prediction (abstain = -1); ``certify`` returns
    per-sample records with probability lower bounds and certified radii.
    """

    def __init__(
        self,
        sigma: float = 0.25,
        eta1: float | None = None,
        eta2: float = 0.5,
        pretrain_iters: int = 300,
        epochs: int = 20,
        lr: float = 1e-3,
        batch_size: int = 32,
        image_shape=None,
        arch: str = "mlp",
        width: int = 64,
        depth: int = 2,
        heads: int = 4,
        patch_size: int = 4,
        n0: int = 100,
        n: int = 1000,
        alpha: float = 0.001,
        certify_batch: int = 500,
        seed: int = 0,
    ):
        self.sigma = sigma
        self.eta1 = eta1
        self.eta2 = eta2
        self.pretrain_iters = pretrain_iters
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.image_shape = image_shape
        self.arch = arch
        self.width = width
        self.depth = depth
        self.heads = heads
        self.patch_size = patch_size
        self.n0 = n0
        self.n = n
        self.alpha = alpha
        self.certify_batch = certify_batch
        self.seed = seed

    def fit(self, X, y):
        X, shape = check_images(X, self.image_shape)
        y = check_labels(y, len(X))
        classes = np.unique(y)
        self.classes_ = classes
        index = {c: i for i, c in enumerate(classes)}
        encoded = np.array([index[v] for v in y], dtype=np.int64)
        dataset = Dataset(images=X, labels=encoded, num_classes=len(classes))
        model_cfg = _encoder_config(shape, self.arch, self.width, self.depth, self.heads, self.patch_size, len(classes))
        pretrained = None
        if self.pretrain_iters > 0:
            pre_cfg = PretrainConfig(batch_size=self.batch_size, iters=self.pretrain_iters, lr=self.lr)
            state, _ = run_pretrain(dataset, model_cfg, pre_cfg, ScheduleConfig(), self.seed)
            pretrained = {k: v.data for k, v in state.params.theta.items()}
        fin_cfg = FinetuneConfig(
            sigma=self.sigma,
            eta1=self.eta1,
            eta2=self.eta2,
            epochs=self.epochs,
            lr=self.lr,
            batch_size=self.batch_size,
            init="pretrained" if pretrained is not None else "random",
        )
        fstate, _ = run_finetune(dataset, model_cfg, fin_cfg, self.seed, pretrained_theta=pretrained)
        self.input_shape_ = shape
        self.finetune_state_ = fstate
        self.classifier_ = ModelClassifier(
            fstate.encoder,
            {k: v.data for k, v in fstate.theta.items()},
            {k: v.data for k, v in fstate.omega.items()},
            self.sigma,
        )
        return self

    def _check_fitted(self):
        if not hasattr(self, "classifier_"):
            raise NotFittedError("fit before inference")

    def _certify_config(self) -> CertifyConfig:
        return CertifyConfig(sigma=self.sigma, n0=self.n0, n=self.n, alpha=self.alpha, batch=self.certify_batch)

    def base_predict(self, X) -> np.ndarray:
        """Single forward pass per sample, no smoothing."""
        self._check_fitted()
        X, _ = check_images(X, self.input_shape_)
        return self.classes_[self.classifier_.predict_batch(X)]

    def predict(self, X) -> np.ndarray:
        """Smoothed prediction with abstention (-1)."""
        self._check_fitted()
        X, _ = check_images(X, self.input_shape_)
        cfg = self._certify_config()
        out = np.empty(len(X), dtype=self.classes_.dtype)
        for i, x in enumerate(X):
            cls = smoothed_predict(self.classifier_, x, cfg, stream(self.seed, "predict", i))
            out[i] = -1 if cls == ABSTAIN else self.classes_[cls]
        return out

    def certify(self, X, y=None) -> list:
        """Certification records for each sample (labels optional)."""
        self._check_fitted()
        X, _ = check_images(X, self.input_shape_)
        labels = None
        if y is not None:
            y = check_labels(y, len(X))
            index = {c: i for i, c in enumerate(self.classes_)}
            labels = np.array([index.get(v, -1) for v in y], dtype=np.int64)
        return certify_dataset(self.classifier_, X, labels, self._certify_config(), self.seed)
