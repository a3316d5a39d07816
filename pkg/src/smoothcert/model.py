"""Time-conditioned encoders plus projector and linear heads.

Two interchangeable encoder trunks share one interface:

* ``vit`` — patch tokens, a learnable class token, learnable positions, and a
  sinusoidal time embedding added to the patch embeddings; the representation
  is the output token at the class-token position.
* ``mlp`` — flattened pixels with the time embedding concatenated, three
  hidden layers; the cheap trunk for fast experiments and test loops.

Parameters live in plain name->Tensor dicts so the same forward code serves
online parameters (taped) and EMA targets (constants).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import gaussian, stream

__all__ = [
    "EncoderConfig",
    "ModelParams",
    "Encoder",
    "build_encoder",
    "init_projector",
    "init_head",
    "project",
    "classify",
    "ema_update",
    "as_constants",
    "clone_arrays",
    "param_count",
    "time_features",
]


@dataclass(frozen=True)
class EncoderConfig:
    input_shape: tuple[int, int, int] = (1, 8, 8)
    arch: str = "vit"  # vit | mlp
    patch_size: int = 4
    depth: int = 4
    width: int = 128
    heads: int = 4
    mlp_hidden: int = 128
    time_dim: int = 32
    projector_hidden: int = 256
    projector_out: int = 64
    num_classes: int = 10

    def __post_init__(self):
        c, h, w = self.input_shape
        if min(c, h, w) < 1:
            raise ValueError(f"bad input shape {self.input_shape}")
        if self.arch not in ("vit", "mlp"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.arch == "vit":
            if h % self.patch_size or w % self.patch_size:
                raise ValueError("height and width must be divisible by patch_size")
            if self.width % self.heads:
                raise ValueError("width must be divisible by heads")
        if self.time_dim % 2:
            raise ValueError("time_dim must be even")


@dataclass
class ModelParams:
    """Online parameters (Tensors) and their EMA mirrors (plain arrays).

    ``theta`` is the encoder, ``nu`` the projector, ``omega`` the linear
    head. The mirrors are never touched by gradients; ``ema_update`` is the
    only way they move.
    """

    theta: dict[str, Tensor]
    nu: dict[str, Tensor]
    omega: dict[str, Tensor]
    theta_ema: dict[str, np.ndarray] = field(default_factory=dict)
    nu_ema: dict[str, np.ndarray] = field(default_factory=dict)


# fixed range the sinusoidal time features must resolve
_TIME_SPAN = (0.002, 80.0)

# input preconditioning: noisy samples are scaled by 1/sqrt(sigma_data^2 + t^2)
# so encoder inputs stay O(1) across the whole noise span
_SIGMA_DATA = 0.5


def input_scale(t: float) -> float:
    return 1.0 / float(np.sqrt(_SIGMA_DATA * _SIGMA_DATA + t * t))


def time_features(t: float, dim: int) -> np.ndarray:
    """Sinusoidal features of a scalar time, log-spaced over the schedule span.

    A fixed phase offset keeps features away from exact zeros at round
    multiples of the base period, where gradients to the embedding would die.
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    half = dim // 2
    periods = np.geomspace(_TIME_SPAN[0], 4.0 * _TIME_SPAN[1], half)
    angles = 2.0 * np.pi * t / periods + 0.5
    return np.concatenate([np.sin(angles), np.cos(angles)])


def _init_affine(rng, n_in: int, n_out: int, std: float = 0.02) -> tuple[np.ndarray, np.ndarray]:
    w = gaussian(rng, (n_in, n_out)) * std
    b = np.zeros(n_out)
    return w, b


def _linear(x: Tensor, params: Mapping[str, Tensor], name: str) -> Tensor:
    return ad.matmul(x, params[f"{name}.w"]) + params[f"{name}.b"]


class Encoder:
    """Shared interface: ``init_params(seed)`` and ``__call__(params, x, t)``."""

    def __init__(self, config: EncoderConfig):
        self.config = config

    def init_params(self, seed: int) -> dict[str, Tensor]:
        raise NotImplementedError

    def __call__(self, params: Mapping[str, Tensor], x: Tensor, t: float) -> Tensor:
        raise NotImplementedError

    def _check_input(self, x: Tensor, t: float) -> None:
        if x.ndim != 4 or x.shape[1:] != self.config.input_shape:
            raise ValueError(f"expected (B, {self.config.input_shape}), got {x.shape}")
        if t < 0:
            raise ValueError("t must be >= 0")


class VitEncoder(Encoder):
    def init_params(self, seed: int) -> dict[str, Tensor]:
        cfg = self.config
        rng = stream(seed, "init", "vit")
        c, h, w = cfg.input_shape
        p = cfg.patch_size
        n_patch = (h // p) * (w // p)
        patch_dim = c * p * p
        params: dict[str, np.ndarray] = {}
        params["embed.w"], params["embed.b"] = _init_affine(rng, patch_dim, cfg.width)
        params["time.w"], params["time.b"] = _init_affine(rng, cfg.time_dim, cfg.width)
        params["cls"] = gaussian(rng, (1, 1, cfg.width)) * 0.02
        params["pos"] = gaussian(rng, (n_patch + 1, cfg.width)) * 0.02
        for i in range(cfg.depth):
            for name, (ni, no) in {
                f"blk{i}.q": (cfg.width, cfg.width),
                f"blk{i}.k": (cfg.width, cfg.width),
                f"blk{i}.v": (cfg.width, cfg.width),
                f"blk{i}.o": (cfg.width, cfg.width),
                f"blk{i}.fc1": (cfg.width, 4 * cfg.width),
                f"blk{i}.fc2": (4 * cfg.width, cfg.width),
            }.items():
                params[f"{name}.w"], params[f"{name}.b"] = _init_affine(rng, ni, no)
            params[f"blk{i}.ln1.g"] = np.ones(cfg.width)
            params[f"blk{i}.ln1.b"] = np.zeros(cfg.width)
            params[f"blk{i}.ln2.g"] = np.ones(cfg.width)
            params[f"blk{i}.ln2.b"] = np.zeros(cfg.width)
        params["ln_f.g"] = np.ones(cfg.width)
        params["ln_f.b"] = np.zeros(cfg.width)
        return {k: Tensor(v, requires_grad=True) for k, v in params.items()}

    def _patchify(self, x: Tensor) -> Tensor:
        c, h, w = self.config.input_shape
        p = self.config.patch_size
        b = x.shape[0]
        out = ad.reshape(x, (b, c, h // p, p, w // p, p))
        out = ad.transpose(out, (0, 2, 4, 1, 3, 5))
        return ad.reshape(out, (b, (h // p) * (w // p), c * p * p))

    def _attention(self, params, prefix: str, x: Tensor) -> Tensor:
        cfg = self.config
        b, tokens, _ = x.shape
        heads, hd = cfg.heads, cfg.width // cfg.heads

        def split(t: Tensor) -> Tensor:
            t = ad.reshape(t, (b, tokens, heads, hd))
            return ad.transpose(t, (0, 2, 1, 3))

        q = split(_linear(x, params, f"{prefix}.q"))
        k = split(_linear(x, params, f"{prefix}.k"))
        v = split(_linear(x, params, f"{prefix}.v"))
        scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(hd))
        attn = ad.softmax(scores, axis=-1)
        out = ad.matmul(attn, v)
        out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (b, tokens, cfg.width))
        return _linear(out, params, f"{prefix}.o")

    def __call__(self, params: Mapping[str, Tensor], x: Tensor, t: float) -> Tensor:
        self._check_input(x, t)
        cfg = self.config
        b = x.shape[0]
        tok = _linear(self._patchify(ad.scale(x, input_scale(t))), params, "embed")
        temb = _linear(Tensor(time_features(t, cfg.time_dim).reshape(1, -1)), params, "time")
        tok = tok + ad.reshape(temb, (1, 1, cfg.width))
        cls = params["cls"] + Tensor(np.zeros((b, 1, cfg.width)))
        h = ad.concat([cls, tok], axis=1) + params["pos"]
        for i in range(cfg.depth):
            n1 = ad.layer_norm(h, params[f"blk{i}.ln1.g"], params[f"blk{i}.ln1.b"])
            h = h + self._attention(params, f"blk{i}", n1)
            n2 = ad.layer_norm(h, params[f"blk{i}.ln2.g"], params[f"blk{i}.ln2.b"])
            m = _linear(ad.gelu(_linear(n2, params, f"blk{i}.fc1")), params, f"blk{i}.fc2")
            h = h + m
        h = ad.layer_norm(h, params["ln_f.g"], params["ln_f.b"])
        return h[:, 0, :]


class MlpEncoder(Encoder):
    def init_params(self, seed: int) -> dict[str, Tensor]:
        cfg = self.config
        rng = stream(seed, "init", "mlp")
        c, h, w = cfg.input_shape
        n_in = c * h * w + cfg.time_dim
        sizes = [n_in, cfg.mlp_hidden, cfg.mlp_hidden, cfg.mlp_hidden, cfg.width]
        params: dict[str, Tensor] = {}
        for i, (ni, no) in enumerate(zip(sizes[:-1], sizes[1:])):
            wgt, bias = _init_affine(rng, ni, no, std=1.0 / np.sqrt(ni))
            params[f"fc{i}.w"] = Tensor(wgt, requires_grad=True)
            params[f"fc{i}.b"] = Tensor(bias, requires_grad=True)
        return params

    def __call__(self, params: Mapping[str, Tensor], x: Tensor, t: float) -> Tensor:
        self._check_input(x, t)
        cfg = self.config
        b = x.shape[0]
        flat = ad.reshape(ad.scale(x, input_scale(t)), (b, int(np.prod(cfg.input_shape))))
        temb = Tensor(np.tile(time_features(t, cfg.time_dim), (b, 1)))
        h = ad.concat([flat, temb], axis=1)
        for i in range(3):
            h = ad.gelu(_linear(h, params, f"fc{i}"))
        return _linear(h, params, "fc3")


def build_encoder(config: EncoderConfig) -> Encoder:
    return VitEncoder(config) if config.arch == "vit" else MlpEncoder(config)


def init_projector(config: EncoderConfig, seed: int) -> dict[str, Tensor]:
    """3-affine-layer MLP head used only by the contrastive objective."""
    rng = stream(seed, "init", "projector")
    sizes = [config.width, config.projector_hidden, config.projector_hidden, config.projector_out]
    params: dict[str, Tensor] = {}
    for i, (ni, no) in enumerate(zip(sizes[:-1], sizes[1:])):
        w, b = _init_affine(rng, ni, no, std=1.0 / np.sqrt(ni))
        params[f"proj{i}.w"] = Tensor(w, requires_grad=True)
        params[f"proj{i}.b"] = Tensor(b, requires_grad=True)
    return params


def init_head(config: EncoderConfig, seed: int) -> dict[str, Tensor]:
    rng = stream(seed, "init", "head")
    w, b = _init_affine(rng, config.width, config.num_classes, std=1.0 / np.sqrt(config.width))
    return {"head.w": Tensor(w, requires_grad=True), "head.b": Tensor(b, requires_grad=True)}


def project(nu: Mapping[str, Tensor], rep: Tensor) -> Tensor:
    h = ad.gelu(_linear(rep, nu, "proj0"))
    h = ad.gelu(_linear(h, nu, "proj1"))
    return _linear(h, nu, "proj2")


def classify(omega: Mapping[str, Tensor], rep: Tensor) -> Tensor:
    return _linear(rep, omega, "head")


def ema_update(ema: Mapping[str, np.ndarray], online: Mapping[str, Tensor], mu: float) -> dict[str, np.ndarray]:
    """theta_ema <- mu * theta_ema + (1 - mu) * theta, elementwise."""
    if not (0.0 <= mu <= 1.0):
        raise ValueError(f"mu must be in [0, 1], got {mu}")
    if set(ema) != set(online):
        raise ValueError("EMA mirror and online parameters disagree on names")
    out: dict[str, np.ndarray] = {}
    for name, target in ema.items():
        src = online[name].data
        if target.shape != src.shape:
            raise ValueError(f"shape mismatch for {name}")
        out[name] = mu * target + (1.0 - mu) * src
    return out


def as_constants(arrays: Mapping[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in arrays.items()}


def clone_arrays(params: Mapping[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in params.items()}


def param_count(*groups: Mapping[str, Tensor]) -> int:
    return sum(t.data.size for g in groups for t in g.values())
