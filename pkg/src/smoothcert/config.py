"""Run configuration: strict-schema JSON whose defaults reproduce the
reference desk-scale run. Unknown keys are rejected anywhere in the tree."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .augment import AugmentConfig
from .certify import CertifyConfig
from .data import Dataset, load_dataset, read_cifar10_binary, synthetic_blobs
from .finetune import FinetuneConfig
from .model import EncoderConfig
from .pretrain import PretrainConfig
from .schedule import ScheduleConfig

__all__ = ["ConfigError", "DataConfig", "RunConfig", "load_run_config", "dataset_from_config"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    kind: str = "blobs"  # blobs | cifar10 | npz
    num_classes: int = 4
    per_class: int = 500
    shape: tuple[int, int, int] = (1, 8, 8)
    margin: float = 4.0
    path: str | None = None
    eval_count: int = 100

    def __post_init__(self):
        if self.kind not in ("blobs", "cifar10", "npz"):
            raise ConfigError(f"unknown data kind {self.kind!r}")
        if self.kind in ("cifar10", "npz") and not self.path:
            raise ConfigError(f"data kind {self.kind!r} needs a path")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out_dir: str = "runs"
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    model: EncoderConfig = field(default_factory=EncoderConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    finetune: FinetuneConfig = field(default_factory=FinetuneConfig)
    certify: CertifyConfig = field(default_factory=CertifyConfig)
    data: DataConfig = field(default_factory=DataConfig)


_TUPLE_FIELDS = {"shape", "input_shape", "crop_scale", "crop_ratio", "blur_sigma", "betas"}


def _build(cls, payload: Any, path: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(payload).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - set(fields))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for name, value in payload.items():
        sub = f"{path}.{name}" if path else name
        nested = _NESTED.get(name)
        if nested is not None:
            kwargs[name] = _build(nested, value, sub)
        elif name in _TUPLE_FIELDS and isinstance(value, (list, tuple)):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


_NESTED = {
    "schedule": ScheduleConfig,
    "model": EncoderConfig,
    "pretrain": PretrainConfig,
    "finetune": FinetuneConfig,
    "certify": CertifyConfig,
    "data": DataConfig,
    "augment": AugmentConfig,
}


def run_config_from_dict(payload: dict) -> RunConfig:
    return _build(RunConfig, payload, "")


def load_run_config(path: str | Path | None) -> RunConfig:
    """Parse a JSON run config; no file means all defaults."""
    if path is None:
        return RunConfig()
    text = Path(path).read_text()
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return run_config_from_dict(payload)


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def dataset_from_config(cfg: DataConfig, seed: int) -> Dataset:
    if cfg.kind == "blobs":
        return synthetic_blobs(cfg.num_classes, cfg.per_class, cfg.shape, cfg.margin, seed)
    if cfg.kind == "cifar10":
        return read_cifar10_binary(cfg.path)
    return load_dataset(cfg.path)
