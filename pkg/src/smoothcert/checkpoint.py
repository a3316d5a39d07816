"""Binary checkpoints: a JSON header plus little-endian float64 payload.

Layout: magic ``SCKP``, u32 format version, u64 header length, the UTF-8
header (sorted keys), the raw SHA-256 of the header bytes, then the array
payload. The header carries the array manifest, a payload digest, the
encoder config, iteration counter, and the root seed (stream derivation is
counter-based, so seed + iteration is the complete RNG state). Any flipped
byte fails one of the digests; save -> load -> save is byte-identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .finetune import FinetuneConfig, FinetuneState, init_finetune_state
from .model import EncoderConfig
from .pretrain import PretrainConfig, PretrainState, init_state

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "pretrain_state_to_checkpoint",
    "checkpoint_to_pretrain_state",
    "finetune_state_to_checkpoint",
    "checkpoint_to_finetune_state",
]

_MAGIC = b"SCKP"
_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str  # pretrain | finetune
    encoder: EncoderConfig
    iteration: int
    seed: int
    arrays: dict[str, np.ndarray]
    scalars: dict[str, float]


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    names = sorted(ckpt.arrays)
    manifest = []
    offset = 0
    chunks = []
    for name in names:
        arr = np.ascontiguousarray(ckpt.arrays[name], dtype="<f8")
        raw = arr.tobytes()
        manifest.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "version": _VERSION,
        "kind": ckpt.kind,
        "encoder": dataclasses.asdict(ckpt.encoder),
        "iteration": int(ckpt.iteration),
        "seed": int(ckpt.seed),
        "scalars": {k: ckpt.scalars[k] for k in sorted(ckpt.scalars)},
        "arrays": manifest,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = b"".join(
        [
            _MAGIC,
            struct.pack("<I", _VERSION),
            struct.pack("<Q", len(header_bytes)),
            header_bytes,
            hashlib.sha256(header_bytes).digest(),
            payload,
        ]
    )
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != _MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != _VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {_VERSION}")
    (hlen,) = struct.unpack("<Q", blob[8:16])
    header_bytes = blob[16 : 16 + hlen]
    digest = blob[16 + hlen : 16 + hlen + 32]
    if hashlib.sha256(header_bytes).digest() != digest:
        raise CheckpointError(f"{path}: header checksum mismatch")
    header = json.loads(header_bytes.decode("utf-8"))
    payload = blob[16 + hlen + 32 :]
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload checksum mismatch")
    arrays = {}
    for entry in header["arrays"]:
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        arrays[entry["name"]] = np.frombuffer(payload[lo:hi], dtype="<f8").reshape(entry["shape"]).copy()
    enc_payload = dict(header["encoder"])
    enc_payload["input_shape"] = tuple(enc_payload["input_shape"])
    return Checkpoint(
        kind=header["kind"],
        encoder=EncoderConfig(**enc_payload),
        iteration=int(header["iteration"]),
        seed=int(header["seed"]),
        arrays=arrays,
        scalars=dict(header["scalars"]),
    )


def _pack_group(prefix: str, arrays: Mapping[str, np.ndarray], out: dict[str, np.ndarray]) -> None:
    for name, arr in arrays.items():
        out[f"{prefix}/{name}"] = np.asarray(arr, dtype=np.float64)


def _unpack_group(prefix: str, arrays: Mapping[str, np.ndarray]) -> dict[str, np.ndarray]:
    plen = len(prefix) + 1
    return {k[plen:]: v for k, v in arrays.items() if k.startswith(prefix + "/")}


def pretrain_state_to_checkpoint(state: PretrainState) -> Checkpoint:
    arrays: dict[str, np.ndarray] = {}
    _pack_group("theta", {k: v.data for k, v in state.params.theta.items()}, arrays)
    _pack_group("nu", {k: v.data for k, v in state.params.nu.items()}, arrays)
    _pack_group("omega", {k: v.data for k, v in state.params.omega.items()}, arrays)
    _pack_group("theta_ema", state.params.theta_ema, arrays)
    _pack_group("nu_ema", state.params.nu_ema, arrays)
    if state.theta_cons is not None:
        _pack_group("theta_cons", state.theta_cons, arrays)
    _pack_group("opt", state.optimizer.state_arrays(), arrays)
    return Checkpoint(
        kind="pretrain",
        encoder=state.encoder.config,
        iteration=state.iteration,
        seed=state.seed,
        arrays=arrays,
        scalars={"opt_step": float(state.optimizer.step_count)},
    )


def checkpoint_to_pretrain_state(ckpt: Checkpoint, cfg: PretrainConfig) -> PretrainState:
    if ckpt.kind != "pretrain":
        raise CheckpointError(f"expected a pretrain checkpoint, got {ckpt.kind!r}")
    state = init_state(ckpt.encoder, cfg, ckpt.seed)
    for name, tensor in state.params.theta.items():
        tensor.data[...] = ckpt.arrays[f"theta/{name}"]
    for name, tensor in state.params.nu.items():
        tensor.data[...] = ckpt.arrays[f"nu/{name}"]
    for name, tensor in state.params.omega.items():
        tensor.data[...] = ckpt.arrays[f"omega/{name}"]
    state.params.theta_ema = _unpack_group("theta_ema", ckpt.arrays)
    state.params.nu_ema = _unpack_group("nu_ema", ckpt.arrays)
    cons = _unpack_group("theta_cons", ckpt.arrays)
    state.theta_cons = cons if cons else None
    state.optimizer.load_state_arrays(_unpack_group("opt", ckpt.arrays), int(ckpt.scalars["opt_step"]))
    state.iteration = ckpt.iteration
    return state


def finetune_state_to_checkpoint(state: FinetuneState, sigma: float) -> Checkpoint:
    arrays: dict[str, np.ndarray] = {}
    _pack_group("theta", {k: v.data for k, v in state.theta.items()}, arrays)
    _pack_group("omega", {k: v.data for k, v in state.omega.items()}, arrays)
    _pack_group("opt", state.optimizer.state_arrays(), arrays)
    return Checkpoint(
        kind="finetune",
        encoder=state.encoder.config,
        iteration=state.epoch,
        seed=state.seed,
        arrays=arrays,
        scalars={"opt_step": float(state.optimizer.step_count), "sigma": float(sigma)},
    )


def checkpoint_to_finetune_state(ckpt: Checkpoint, cfg: FinetuneConfig) -> FinetuneState:
    if ckpt.kind != "finetune":
        raise CheckpointError(f"expected a finetune checkpoint, got {ckpt.kind!r}")
    base = dataclasses.replace(cfg, init="random")
    state = init_finetune_state(ckpt.encoder, base, ckpt.seed)
    for name, tensor in state.theta.items():
        tensor.data[...] = ckpt.arrays[f"theta/{name}"]
    for name, tensor in state.omega.items():
        tensor.data[...] = ckpt.arrays[f"omega/{name}"]
    state.optimizer.load_state_arrays(_unpack_group("opt", ckpt.arrays), int(ckpt.scalars["opt_step"]))
    state.epoch = ckpt.iteration
    return state
