"""Certified robustness via trajectory-consistent representations.

The pipeline: self-supervised pre-training that aligns temporally adjacent
points of the deterministic noising trajectory, supervised fine-tuning under
Gaussian noise with a cross-view consistency objective, and randomized
smoothing certification with exact binomial confidence bounds.
"""

from .autodiff import Tensor, finite_diff_check, gradients, no_grad, stop_gradient
from .certify import (
    ABSTAIN,
    BaseClassifier,
    CertificationRecord,
    CertifyConfig,
    ConstantClassifier,
    HalfspaceClassifier,
    ModelClassifier,
    certified_radius,
    certify,
    certify_dataset,
    predict,
    sample_counts,
)
from .analysis import certified_accuracy, latency_summary, linear_probe, representation_fd
from .augment import AugmentConfig, augment
from .config import DataConfig, RunConfig, dataset_from_config, load_run_config
from .data import Dataset, read_cifar10_binary, stride_subset, synthetic_blobs
from .estimators import SmoothedCertifiedClassifier, TrajectoryRepresentationLearner
from .finetune import FinetuneConfig, finetune_loss, run_finetune
from .model import EncoderConfig, ModelParams, build_encoder, classify, ema_update, project
from .pretrain import PretrainConfig, consistency_loss, contrastive_loss, ema_schedule, info_nce, run_pretrain
from .rng import seeded_gaussian, stream
from .schedule import (
    CurriculumState,
    NoiseSchedule,
    ScheduleConfig,
    TrajectoryPair,
    adjacent_pair,
    curriculum_intervals,
    discretize,
    forward_sample,
    sigma_to_time,
)
from .stats import clopper_pearson_lower, inv_normal_cdf, normal_cdf

__version__ = "0.1.0"
