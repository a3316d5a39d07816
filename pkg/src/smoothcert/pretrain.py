"""Self-supervised pre-training: trajectory-pair consistency plus contrastive views.

Each step samples one interval index for the whole batch, builds adjacent
trajectory pairs that share their Gaussian draw, and optimizes the sum of two
instance-discrimination losses:

* consistency — align the encoder output of the later point with a
  stop-gradient pass over the earlier point (no projector);
* contrastive — align projector outputs of two augmented clean views against
  an EMA target whose rate follows a monotone sigmoid ramp.

All stochasticity is a pure function of (seed, iteration), so a run can be
resumed from any checkpoint and reproduce the unbroken trajectory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .augment import AugmentConfig, augment
from .data import Dataset
from .model import (
    Encoder,
    EncoderConfig,
    ModelParams,
    as_constants,
    build_encoder,
    clone_arrays,
    ema_update,
    init_head,
    init_projector,
    project,
)
from .optim import AdamW
from .rng import stream
from .schedule import NoiseSchedule, ScheduleConfig, adjacent_pair

__all__ = [
    "PretrainConfig",
    "PretrainBatch",
    "PretrainState",
    "info_nce",
    "consistency_loss",
    "contrastive_loss",
    "ema_schedule",
    "make_batch",
    "pretrain_step",
    "init_state",
    "run_pretrain",
]


@dataclass(frozen=True)
class PretrainConfig:
    tau: float = 0.2
    mu1: float = 0.0  # consistency-target EMA rate; 0 = stop-gradient on the online model
    mu2: float = 0.99  # contrastive-target base EMA rate (ramp start)
    ema_end: float = 0.9999
    ema_m: float = 10.0
    batch_size: int = 64
    iters: int = 2000
    lr: float = 1e-4
    warmup: int = 500
    weight_decay: float = 0.0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        for name in ("mu1", "mu2"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1]")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")


@dataclass
class PretrainBatch:
    """One step's inputs: clean images, two augmented views, stacked pairs."""

    x0: np.ndarray
    z1: np.ndarray
    z2: np.ndarray
    x_tn: np.ndarray
    x_tn_minus1: np.ndarray
    n: int
    t_n: float
    t_n_minus1: float


def info_nce(anchors: Tensor, candidates: Tensor, tau: float) -> Tensor:
    """Mean over i of -log( exp(a_i . c_i / tau) / sum_j exp(a_i . c_j / tau) ).

    ``candidates[i]`` is the positive for ``anchors[i]``; the rest of the
    batch are negatives. Inputs are expected unit-norm.
    """
    if tau <= 0:
        raise ValueError("tau must be > 0")
    if anchors.shape != candidates.shape or anchors.ndim != 2:
        raise ValueError(f"anchor/candidate shape mismatch: {anchors.shape} vs {candidates.shape}")
    b = anchors.shape[0]
    logits = ad.scale(ad.matmul(anchors, ad.transpose(candidates, (1, 0))), 1.0 / tau)
    lse = ad.logsumexp(logits, axis=1)
    diag = ad.tsum(logits * Tensor(np.eye(b)), axis=1)
    return ad.tmean(lse - diag)


def consistency_loss(
    encoder: Encoder,
    theta: Mapping[str, Tensor],
    batch: PretrainBatch,
    tau: float,
    target_theta: Mapping[str, np.ndarray] | None = None,
) -> Tensor:
    """Trajectory-pair alignment on raw encoder outputs (no projector).

    Anchors are the later (noisier) points; candidates come from a
    gradient-free pass — over ``target_theta`` when a consistency-target
    mirror is kept, otherwise over the online parameters, which realizes the
    zero-EMA-rate simplification exactly.
    """
    anchors = ad.l2_normalize(encoder(theta, Tensor(batch.x_tn), batch.t_n))
    cand_params = as_constants(target_theta) if target_theta is not None else theta
    with ad.no_grad():
        candidates = ad.l2_normalize(encoder(cand_params, Tensor(batch.x_tn_minus1), batch.t_n_minus1))
    return info_nce(anchors, candidates, tau)


def contrastive_loss(
    encoder: Encoder,
    theta: Mapping[str, Tensor],
    nu: Mapping[str, Tensor],
    batch: PretrainBatch,
    t0: float,
    tau: float,
    theta_ema: Mapping[str, np.ndarray],
    nu_ema: Mapping[str, np.ndarray],
) -> Tensor:
    """Augmented-view alignment on projector outputs against the EMA target."""
    anchors = ad.l2_normalize(project(nu, encoder(theta, Tensor(batch.z1), t0)))
    with ad.no_grad():
        rep = encoder(as_constants(theta_ema), Tensor(batch.z2), t0)
        candidates = ad.l2_normalize(project(as_constants(nu_ema), rep))
    return info_nce(anchors, candidates, tau)


def ema_schedule(k: int, total: int, start: float = 0.99, end: float = 0.9999, m: float = 10.0) -> float:
    """Monotone sigmoid ramp of the target EMA rate from ``start`` to ``end``.

    A logistic in k/total, renormalized so the endpoints are hit exactly;
    larger ``m`` front-loads the increase less and steepens the middle.
    """
    if not 0 <= k <= total:
        raise ValueError(f"k={k} outside 0..{total}")
    if start >= end:
        raise ValueError("need start < end")
    if total == 0:
        return end
    u = k / total

    def logistic(v: float) -> float:
        return 1.0 / (1.0 + math.exp(-m * (v - 0.5)))

    lo, hi = logistic(0.0), logistic(1.0)
    s = (logistic(u) - lo) / (hi - lo)
    return start + (end - start) * s


def make_batch(
    dataset: Dataset,
    sched: NoiseSchedule,
    cfg: PretrainConfig,
    seed: int,
    k: int,
) -> PretrainBatch:
    """Deterministic batch for iteration ``k``: indices, views, pairs, one n."""
    b = cfg.batch_size
    idx = stream(seed, "batch", k).integers(0, len(dataset), size=b)
    n = int(stream(seed, "interval", k).integers(1, sched.num_intervals + 1))
    x0 = dataset.images[idx]
    z1 = np.stack([augment(x0[i], stream(seed, "view1", k, i), cfg.augment) for i in range(b)])
    z2 = np.stack([augment(x0[i], stream(seed, "view2", k, i), cfg.augment) for i in range(b)])
    pairs = [adjacent_pair(x0[i], n, sched, stream(seed, "pair", k, i)) for i in range(b)]
    return PretrainBatch(
        x0=x0,
        z1=z1,
        z2=z2,
        x_tn=np.stack([p.x_tn for p in pairs]),
        x_tn_minus1=np.stack([p.x_tn_minus1 for p in pairs]),
        n=n,
        t_n=pairs[0].t_n,
        t_n_minus1=pairs[0].t_n_minus1,
    )


@dataclass
class PretrainState:
    encoder: Encoder
    params: ModelParams
    optimizer: AdamW
    theta_cons: dict[str, np.ndarray] | None  # consistency-target mirror, kept only when mu1 > 0
    seed: int
    iteration: int


def init_state(model_cfg: EncoderConfig, cfg: PretrainConfig, seed: int) -> PretrainState:
    encoder = build_encoder(model_cfg)
    theta = encoder.init_params(seed)
    nu = init_projector(model_cfg, seed)
    omega = init_head(model_cfg, seed)
    params = ModelParams(
        theta=theta,
        nu=nu,
        omega=omega,
        theta_ema=clone_arrays(theta),
        nu_ema=clone_arrays(nu),
    )
    trainable = {**theta, **{f"nu.{k}": v for k, v in nu.items()}}
    optimizer = AdamW(trainable, lr=cfg.lr, weight_decay=cfg.weight_decay, warmup=cfg.warmup)
    theta_cons = clone_arrays(theta) if cfg.mu1 > 0 else None
    return PretrainState(
        encoder=encoder,
        params=params,
        optimizer=optimizer,
        theta_cons=theta_cons,
        seed=seed,
        iteration=0,
    )


def pretrain_step(
    state: PretrainState,
    batch: PretrainBatch,
    sched: NoiseSchedule,
    cfg: PretrainConfig,
    total_iters: int,
) -> dict:
    """One optimizer update plus the post-step EMA moves; returns step metrics."""
    params = state.params
    t0 = float(sched.grid[0])
    l_cons = consistency_loss(state.encoder, params.theta, batch, cfg.tau, target_theta=state.theta_cons)
    l_contr = contrastive_loss(
        state.encoder, params.theta, params.nu, batch, t0, cfg.tau, params.theta_ema, params.nu_ema
    )
    total = l_cons + l_contr
    names = list(params.theta) + [f"nu.{k}" for k in params.nu]
    leaves = [params.theta[n] for n in params.theta] + [params.nu[n] for n in params.nu]
    grads = dict(zip(names, ad.gradients(total, leaves)))
    state.optimizer.step(grads)
    mu = ema_schedule(state.iteration, total_iters, start=cfg.mu2, end=cfg.ema_end, m=cfg.ema_m)
    params.theta_ema = ema_update(params.theta_ema, params.theta, mu)
    params.nu_ema = ema_update(params.nu_ema, params.nu, mu)
    if state.theta_cons is not None:
        state.theta_cons = ema_update(state.theta_cons, params.theta, cfg.mu1)
    state.iteration += 1
    return {
        "iter": state.iteration,
        "loss_consistency": l_cons.item(),
        "loss_contrastive": l_contr.item(),
        "mu": mu,
        "n": batch.n,
        "N": sched.num_intervals,
    }


def run_pretrain(
    dataset: Dataset,
    model_cfg: EncoderConfig,
    cfg: PretrainConfig,
    sched_cfg: ScheduleConfig,
    seed: int,
    state: PretrainState | None = None,
    stop_at: int | None = None,
    on_metrics: Callable[[dict], None] | None = None,
) -> tuple[PretrainState, list[dict]]:
    """Run (or resume) the pre-training loop.

    ``cfg.iters`` is the planned horizon that the curriculum and EMA ramp are
    pinned to; ``stop_at`` pauses earlier without changing the plan, so a
    paused-and-resumed run retraces the unbroken trajectory exactly.
    """
    if state is None:
        state = init_state(model_cfg, cfg, seed)
    until = cfg.iters if stop_at is None else min(stop_at, cfg.iters)
    metrics: list[dict] = []
    while state.iteration < until:
        sched = sched_cfg.grid_at(state.iteration, cfg.iters)
        batch = make_batch(dataset, sched, cfg, state.seed, state.iteration)
        record = pretrain_step(state, batch, sched, cfg, cfg.iters)
        metrics.append(record)
        if on_metrics is not None:
            on_metrics(record)
    return state, metrics
