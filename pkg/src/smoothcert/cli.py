"""Command-line surface tying the pipeline together.

Commands: gen-data, pretrain, finetune, certify, evaluate, probe. Every
command accepts ``--config`` (JSON, strict schema), ``--seed``, and ``--out``.
Outputs are written to temp names and renamed on success; failures exit
nonzero with one machine-parseable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from .analysis import certified_accuracy, latency_summary, linear_probe, representation_fd
from .certify import (
    CertificationRecord,
    CertifyConfig,
    HalfspaceClassifier,
    ModelClassifier,
    certify_dataset,
)
from .checkpoint import (
    Checkpoint,
    checkpoint_to_pretrain_state,
    finetune_state_to_checkpoint,
    load_checkpoint,
    pretrain_state_to_checkpoint,
    save_checkpoint,
)
from .config import RunConfig, dataset_from_config, load_run_config
from .data import save_dataset, stride_subset
from .finetune import run_finetune
from .model import as_constants, build_encoder, param_count
from .pretrain import run_pretrain
from .rng import stream
from .autodiff import Tensor, no_grad

__all__ = ["main"]

_RECORD_FIELDS = ["sample_id", "label", "predicted", "abstain", "pa_lower", "radius", "wall_clock_ms"]


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_records_csv(path: Path, records: list[CertificationRecord]) -> None:
    lines = [",".join(_RECORD_FIELDS)]
    for r in records:
        lines.append(
            f"{r.sample_id},{r.label},{r.predicted},{int(r.abstain)},{r.pa_lower!r},{r.radius!r},{r.wall_clock_ms!r}"
        )
    _atomic_write_text(path, "\n".join(lines) + "\n")


def read_records_csv(path: Path) -> list[CertificationRecord]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no certification records")
    return [
        CertificationRecord(
            sample_id=int(row["sample_id"]),
            label=int(row["label"]),
            predicted=int(row["predicted"]),
            abstain=bool(int(row["abstain"])),
            pa_lower=float(row["pa_lower"]),
            radius=float(row["radius"]),
            wall_clock_ms=float(row["wall_clock_ms"]),
        )
        for row in rows
    ]


def _metrics_text(metrics: list[dict]) -> str:
    return "".join(json.dumps(m) + "\n" for m in metrics)


def _load_config(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    ds = dataset_from_config(cfg.data, cfg.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_suffix(out.suffix + ".tmp")
    save_dataset(ds, tmp)
    os.replace(tmp, out)
    print(f"wrote {len(ds)} samples to {out}")
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    pre = cfg.pretrain if args.iters is None else dataclasses.replace(cfg.pretrain, iters=args.iters)
    ds = dataset_from_config(cfg.data, cfg.seed)
    state = None
    if args.resume:
        state = checkpoint_to_pretrain_state(load_checkpoint(args.resume), pre)
    state, metrics = run_pretrain(ds, cfg.model, pre, cfg.schedule, cfg.seed, state=state, stop_at=args.stop_at)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out / "pretrain_metrics.jsonl", _metrics_text(metrics))
    save_checkpoint(out / "pretrain.ckpt", pretrain_state_to_checkpoint(state))
    n_params = param_count(state.params.theta, state.params.nu, state.params.omega)
    print(f"pretrained {state.iteration} iters ({n_params} params) -> {out}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_config(args)
    fin = cfg.finetune
    if args.sigma is not None:
        fin = dataclasses.replace(fin, sigma=args.sigma)
    if args.init is not None:
        fin = dataclasses.replace(fin, init=args.init)
    if args.epochs is not None:
        fin = dataclasses.replace(fin, epochs=args.epochs)
    ds = dataset_from_config(cfg.data, cfg.seed)
    pretrained = None
    model_cfg = cfg.model
    if fin.init == "pretrained":
        if not args.checkpoint:
            raise ValueError("finetune with init='pretrained' needs --checkpoint")
        ckpt = load_checkpoint(args.checkpoint)
        if ckpt.kind != "pretrain":
            raise ValueError(f"--checkpoint must be a pretrain checkpoint, got {ckpt.kind!r}")
        model_cfg = ckpt.encoder
        plen = len("theta/")
        pretrained = {k[plen:]: v for k, v in ckpt.arrays.items() if k.startswith("theta/")}
    state, metrics = run_finetune(ds, model_cfg, fin, cfg.seed, pretrained_theta=pretrained)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _atomic_write_text(out / "finetune_metrics.jsonl", _metrics_text(metrics))
    save_checkpoint(out / "finetune.ckpt", finetune_state_to_checkpoint(state, fin.sigma))
    print(f"finetuned {state.epoch} epochs at sigma={fin.sigma} -> {out}")
    return 0


def cmd_certify(args) -> int:
    cfg = _load_config(args)
    cert = cfg.certify
    for name in ("sigma", "n", "n0", "alpha", "batch"):
        val = getattr(args, name)
        if val is not None:
            cert = dataclasses.replace(cert, **{name: val})
    if args.oracle:
        if args.oracle != "halfspace":
            raise ValueError(f"unknown oracle {args.oracle!r}")
        dim = args.oracle_dim
        w = np.ones(dim)
        clf = HalfspaceClassifier(w)
        x = (w / np.linalg.norm(w) * args.oracle_margin).reshape(1, 1, dim)
        images = np.repeat(x[None], args.oracle_points, axis=0)
        labels = np.ones(args.oracle_points, dtype=np.int64)
    else:
        if not args.checkpoint:
            raise ValueError("certify needs --checkpoint or --oracle")
        ckpt = load_checkpoint(args.checkpoint)
        if ckpt.kind != "finetune":
            raise ValueError(f"--checkpoint must be a finetune checkpoint, got {ckpt.kind!r}")
        plen = len("theta/")
        theta = {k[plen:]: v for k, v in ckpt.arrays.items() if k.startswith("theta/")}
        olen = len("omega/")
        omega = {k[olen:]: v for k, v in ckpt.arrays.items() if k.startswith("omega/")}
        clf = ModelClassifier(build_encoder(ckpt.encoder), theta, omega, cert.sigma)
        ds = stride_subset(dataset_from_config(cfg.data, cfg.seed), cfg.data.eval_count)
        images, labels = ds.images, ds.labels
    records = certify_dataset(clf, images, labels, cert, cfg.seed)
    write_records_csv(Path(args.out), records)
    certified = sum(not r.abstain for r in records)
    print(f"certified {certified}/{len(records)} samples -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    radii = np.arange(args.r_start, args.r_stop + 1e-12, args.r_step)
    all_records = [read_records_csv(Path(p)) for p in args.records]
    names = args.names or [f"set{i}" for i in range(len(all_records))]
    if len(names) != len(all_records):
        raise ValueError("--names must match --records in length")
    tables = {name: certified_accuracy(records, radii) for name, records in zip(names, all_records)}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["radius," + ",".join(names)]
    for i, r in enumerate(radii):
        lines.append(f"{float(r)!r}," + ",".join(repr(float(tables[n].accuracy[i])) for n in names))
    _atomic_write_text(out / "certified_accuracy.csv", "\n".join(lines) + "\n")
    summary = {
        name: {
            "records": len(records),
            "abstain_rate": float(np.mean([r.abstain for r in records])),
            "latency": latency_summary(records, n=args.n),
        }
        for name, records in zip(names, all_records)
    }
    _atomic_write_text(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"evaluated {len(all_records)} record set(s) -> {out}")
    return 0


def cmd_probe(args) -> int:
    cfg = _load_config(args)
    ckpt = load_checkpoint(args.checkpoint)
    if ckpt.kind != "pretrain":
        raise ValueError(f"--checkpoint must be a pretrain checkpoint, got {ckpt.kind!r}")
    plen = len("theta/")
    theta = {k[plen:]: v for k, v in ckpt.arrays.items() if k.startswith("theta/")}
    encoder = build_encoder(ckpt.encoder)
    ds = dataset_from_config(cfg.data, cfg.seed)
    eval_ds = stride_subset(ds, cfg.data.eval_count)
    t0 = cfg.schedule.t_min

    def reps_at(images: np.ndarray, t: float, noise_sigma: float, tag: str) -> np.ndarray:
        rng = stream(cfg.seed, "probe", tag)
        noisy = images if noise_sigma == 0 else images + noise_sigma * rng.standard_normal(images.shape)
        with no_grad():
            return encoder(as_constants(theta), Tensor(noisy), t).data

    train_reps = reps_at(ds.images, t0, 0.0, "train")
    eval_sets = {}
    for sigma in (0.0, 0.25, 0.5, 1.0):
        t = t0 if sigma == 0 else sigma
        eval_sets[sigma] = (reps_at(eval_ds.images, t, sigma, f"eval{sigma}"), eval_ds.labels)
    accs = linear_probe(train_reps, ds.labels, eval_sets, ds.num_classes)
    t_max = cfg.schedule.t_max
    rng = stream(cfg.seed, "probe", "fd")
    noisy_max = eval_ds.images + t_max * rng.standard_normal(eval_ds.images.shape)
    reps_clean = reps_at(eval_ds.images, t0, 0.0, "fd-clean")
    with no_grad():
        reps_noisy = encoder(as_constants(theta), Tensor(noisy_max), t_max).data
    fd = representation_fd(reps_noisy, reps_clean)
    payload = {"probe_accuracy": {str(k): v for k, v in accs.items()}, "representation_fd": fd}
    _atomic_write_text(Path(args.out), json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"probe accuracies {accs} fd {fd:.4f} -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smoothcert", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON run config (defaults if omitted)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=True)

    p = sub.add_parser("gen-data", help="materialize a dataset file")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("pretrain", help="run self-supervised pre-training")
    common(p)
    p.add_argument("--iters", type=int, default=None, help="planned total iterations")
    p.add_argument("--stop-at", type=int, default=None, dest="stop_at", help="pause before the planned end")
    p.add_argument("--resume", default=None, help="pretrain checkpoint to resume from")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="supervised fine-tuning at one noise level")
    common(p)
    p.add_argument("--checkpoint", default=None, help="pretrain checkpoint")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--init", choices=["pretrained", "random"], default=None)
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("certify", help="emit certification records as CSV")
    common(p)
    p.add_argument("--checkpoint", default=None, help="finetune checkpoint")
    p.add_argument("--oracle", default=None, help="'halfspace' for the analytic oracle")
    p.add_argument("--oracle-margin", type=float, default=0.5, dest="oracle_margin")
    p.add_argument("--oracle-dim", type=int, default=8, dest="oracle_dim")
    p.add_argument("--oracle-points", type=int, default=200, dest="oracle_points")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--n0", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.set_defaults(fn=cmd_certify)

    p = sub.add_parser("evaluate", help="build certified-accuracy curves from records")
    p.add_argument("--records", nargs="+", required=True)
    p.add_argument("--names", nargs="+", default=None)
    p.add_argument("--n", type=int, default=10000, help="smoothing draw count for latency normalization")
    p.add_argument("--r-start", type=float, default=0.0)
    p.add_argument("--r-stop", type=float, default=1.0)
    p.add_argument("--r-step", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("probe", help="linear probe on noisy representations + FD")
    common(p)
    p.add_argument("--checkpoint", required=True, help="pretrain checkpoint")
    p.set_defaults(fn=cmd_probe)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # single-line machine-parseable failure
        sys.stderr.write(json.dumps({"error": f"{type(exc).__name__}: {exc}"}) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
