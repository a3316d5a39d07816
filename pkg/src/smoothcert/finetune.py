"""Supervised fine-tuning at a fixed smoothing noise level.

Each image is noised twice with independent draws; the objective is label
cross-entropy on the first view, a cross-prediction consistency term between
the two views, and a negative-entropy term that rewards confident
predictions. Setting both extra weights to zero recovers plain Gaussian
noise training, which doubles as the baseline configuration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset
from .model import Encoder, EncoderConfig, build_encoder, classify, init_head
from .optim import AdamW
from .rng import gaussian, stream
from .schedule import sigma_to_time

__all__ = [
    "FinetuneConfig",
    "FinetuneState",
    "finetune_loss",
    "finetune_loss_terms",
    "finetune_step",
    "init_finetune_state",
    "run_finetune",
    "one_hot",
]

_PROB_FLOOR = 1e-12  # inside every log; confident predictions must not hit -inf


@dataclass(frozen=True)
class FinetuneConfig:
    sigma: float = 0.25
    eta1: float | None = None  # None resolves to 10 below sigma 0.5, else 20
    eta2: float = 0.5
    epochs: int = 50
    lr: float = 1e-4
    batch_size: int = 64
    init: str = "pretrained"  # pretrained | random

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.init not in ("pretrained", "random"):
            raise ValueError(f"init must be 'pretrained' or 'random', got {self.init!r}")

    def resolved_eta1(self) -> float:
        if self.eta1 is not None:
            return float(self.eta1)
        return 10.0 if self.sigma < 0.5 else 20.0


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    eye = np.eye(num_classes)
    return eye[np.asarray(labels, dtype=np.int64)]


def finetune_loss_terms(
    logits_a: Tensor, logits_b: Tensor, label_onehot: np.ndarray
) -> tuple[Tensor, Tensor, Tensor]:
    """(cross-entropy, cross-view consistency, negative entropy), batch means."""
    y = np.asarray(label_onehot, dtype=np.float64)
    if y.ndim != 2 or logits_a.shape != logits_b.shape or logits_a.shape != y.shape:
        raise ValueError(f"shape mismatch: {logits_a.shape}, {logits_b.shape}, {y.shape}")
    row_sums = y.sum(axis=1)
    if not (np.all(y >= 0) and np.allclose(row_sums, 1.0, atol=1e-9)):
        raise ValueError("labels must be rows of a probability distribution")
    pa = ad.softmax(logits_a)
    pb = ad.softmax(logits_b)
    log_pa = ad.log(ad.clip_min(pa, _PROB_FLOOR))
    log_pb = ad.log(ad.clip_min(pb, _PROB_FLOOR))
    ce = ad.neg(ad.tmean(ad.tsum(Tensor(y) * log_pa, axis=1)))
    cons = ad.neg(ad.tmean(ad.tsum(pa * log_pb, axis=1)))
    ent = ad.neg(ad.tmean(ad.tsum(pa * log_pa, axis=1)))
    return ce, cons, ent


def finetune_loss(
    logits_a: Tensor, logits_b: Tensor, label_onehot: np.ndarray, eta1: float, eta2: float
) -> Tensor:
    ce, cons, ent = finetune_loss_terms(logits_a, logits_b, label_onehot)
    return ce + ad.scale(cons, eta1) + ad.scale(ent, eta2)


@dataclass
class FinetuneState:
    encoder: Encoder
    theta: dict[str, Tensor]
    omega: dict[str, Tensor]
    optimizer: AdamW
    seed: int
    epoch: int


def init_finetune_state(
    model_cfg: EncoderConfig,
    cfg: FinetuneConfig,
    seed: int,
    pretrained_theta: Mapping[str, np.ndarray] | None = None,
) -> FinetuneState:
    """Fresh state; the projector is dropped, only encoder and head train."""
    encoder = build_encoder(model_cfg)
    theta = encoder.init_params(seed)
    if cfg.init == "pretrained":
        if pretrained_theta is None:
            raise ValueError("init='pretrained' requires pretrained encoder parameters")
        theta = {k: Tensor(np.array(pretrained_theta[k]), requires_grad=True) for k in theta}
    omega = init_head(model_cfg, seed)
    trainable = {**theta, **{f"omega.{k}": v for k, v in omega.items()}}
    optimizer = AdamW(trainable, lr=cfg.lr, warmup=0)
    return FinetuneState(encoder=encoder, theta=theta, omega=omega, optimizer=optimizer, seed=seed, epoch=0)


def finetune_step(
    state: FinetuneState,
    x: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    cfg: FinetuneConfig,
    rng: np.random.Generator,
) -> dict:
    """One update on a minibatch; the two noisings use independent draws."""
    eps_a = gaussian(rng, x.shape)
    eps_b = gaussian(rng, x.shape)
    t = sigma_to_time(cfg.sigma)
    xa = Tensor(x + cfg.sigma * eps_a)
    xb = Tensor(x + cfg.sigma * eps_b)
    logits_a = classify(state.omega, state.encoder(state.theta, xa, t))
    logits_b = classify(state.omega, state.encoder(state.theta, xb, t))
    y = one_hot(labels, num_classes)
    ce, cons, ent = finetune_loss_terms(logits_a, logits_b, y)
    loss = ce + ad.scale(cons, cfg.resolved_eta1()) + ad.scale(ent, cfg.eta2)
    names = list(state.theta) + [f"omega.{k}" for k in state.omega]
    leaves = [state.theta[n] for n in state.theta] + [state.omega[n] for n in state.omega]
    grads = dict(zip(names, ad.gradients(loss, leaves)))
    state.optimizer.step(grads)
    acc = float(np.mean(np.argmax(logits_a.data, axis=1) == labels))
    return {
        "loss": loss.item(),
        "ce_term": ce.item(),
        "cons_term": cons.item(),
        "ent_term": ent.item(),
        "train_acc": acc,
    }


def run_finetune(
    dataset: Dataset,
    model_cfg: EncoderConfig,
    cfg: FinetuneConfig,
    seed: int,
    pretrained_theta: Mapping[str, np.ndarray] | None = None,
    state: FinetuneState | None = None,
    on_metrics: Callable[[dict], None] | None = None,
) -> tuple[FinetuneState, list[dict]]:
    """Epoch loop over deterministic permutations; emits per-epoch averages."""
    if state is None:
        state = init_finetune_state(model_cfg, cfg, seed, pretrained_theta)
    m = len(dataset)
    if m == 0:
        raise ValueError("empty dataset")
    metrics: list[dict] = []
    while state.epoch < cfg.epochs:
        epoch = state.epoch
        order = stream(seed, "ft-perm", epoch).permutation(m)
        sums: dict[str, float] = {}
        steps = 0
        for start in range(0, m, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            rng = stream(seed, "ft-noise", epoch, start)
            rec = finetune_step(state, dataset.images[idx], dataset.labels[idx], dataset.num_classes, cfg, rng)
            for key, val in rec.items():
                sums[key] = sums.get(key, 0.0) + val
            steps += 1
        record = {"epoch": epoch + 1}
        record.update({k: v / steps for k, v in sums.items()})
        metrics.append(record)
        if on_metrics is not None:
            on_metrics(record)
        state.epoch += 1
    return state, metrics
