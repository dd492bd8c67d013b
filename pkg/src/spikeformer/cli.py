"""Command-line entry point: train, eval, profile, ablate, export-attn.

Exit codes: 0 success, 2 usage/config errors, 3 data errors, 4 checkpoint
errors. ``SPIKEFORMER_THREADS`` caps internal (BLAS) parallelism.
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import data as datamod
from . import fileio, profiler
from .attention import VARIANTS, flop_sop_cost, SsaConfig
from .errors import (CheckpointError, ConfigError, DataError, ShapeError,
                     SpikeformerError, TrainingDiverged)
from .model import ModelConfig, SpikeTransformer
from .trainer import TrainConfig, eval_loop, train_loop

_MODEL_KEYS = set(ModelConfig().to_kv())
_TRAIN_KEYS = {"epochs", "batch_size", "base_lr", "weight_decay", "seed"}


def _apply_thread_cap() -> None:
    cap = os.environ.get("SPIKEFORMER_THREADS")
    if not cap:
        return
    try:
        limit = int(cap)
    except ValueError:
        raise ConfigError(f"SPIKEFORMER_THREADS must be an integer, got {cap!r}")
    try:
        import threadpoolctl
        global _THREAD_LIMIT
        _THREAD_LIMIT = threadpoolctl.threadpool_limits(limits=limit)
    except ImportError:
        os.environ.setdefault("OMP_NUM_THREADS", str(limit))


def load_run_config(path: str) -> tuple[ModelConfig, TrainConfig]:
    """Parse a key=value run config covering model and training keys."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    kv = fileio.parse_kv_lines(text)
    known = _MODEL_KEYS | _TRAIN_KEYS
    for key in kv:
        if key not in known:
            offending = next((raw for raw in text.splitlines() if raw.strip().startswith(key)), key)
            raise ConfigError(f"unknown config key on line: {offending!r}")
    model_cfg = ModelConfig.from_kv({k: v for k, v in kv.items() if k in _MODEL_KEYS})
    try:
        train_cfg = TrainConfig(
            epochs=int(kv.get("epochs", "10")),
            batch_size=int(kv.get("batch_size", "64")),
            base_lr=float(kv.get("base_lr", "5e-4")),
            weight_decay=float(kv.get("weight_decay", "0.02")),
            seed=int(kv.get("seed", "0")),
        )
    except ValueError as exc:
        raise ConfigError(f"bad training config value: {exc}") from exc
    return model_cfg, train_cfg


def _resolved_config_text(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    merged = dict(model_cfg.to_kv())
    merged.update(train_cfg.to_kv())
    return fileio.format_kv_lines(merged)


def _config_hash(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    """Hash of the resolved config minus the attention variant (ablation key)."""
    merged = dict(model_cfg.to_kv())
    merged.pop("variant", None)
    merged.update(train_cfg.to_kv())
    return hashlib.sha256(fileio.format_kv_lines(merged).encode()).hexdigest()[:16]


def _check_dataset(config: ModelConfig, ds: datamod.Dataset, origin: str) -> None:
    if ds.images.shape[1] != config.in_channels or ds.images.shape[2] != config.image_size:
        raise DataError(f"{origin}: images {ds.images.shape[1:]} do not match model "
                        f"[{config.in_channels},{config.image_size},{config.image_size}]")
    if len(ds) and int(ds.labels.max()) >= config.num_classes:
        raise DataError(f"{origin}: label {int(ds.labels.max())} outside "
                        f"{config.num_classes} classes")


def cmd_train(args) -> int:
    model_cfg, train_cfg = load_run_config(args.config)
    if args.seed is not None:
        train_cfg.seed = args.seed
    train_cfg.timing = args.timing
    train_ds, test_ds = datamod.parse_data_spec(args.data, seed=train_cfg.seed,
                                                image_size=model_cfg.image_size)
    if args.test_data:
        test_ds = datamod.load_eval_dataset(args.test_data, seed=train_cfg.seed + 1,
                                            image_size=model_cfg.image_size)
    _check_dataset(model_cfg, train_ds, args.data)
    os.makedirs(args.out, exist_ok=True)
    fileio.atomic_write_text(os.path.join(args.out, "config.txt"),
                             _resolved_config_text(model_cfg, train_cfg))
    model = SpikeTransformer(model_cfg, seed=train_cfg.seed)
    history = train_loop(model, train_ds, test_ds, train_cfg, out_dir=args.out,
                         log=lambda msg: print(msg, flush=True))
    final = history[-1]
    print(f"final_test_acc={final.test_acc:.6f}")
    return 0


def cmd_eval(args) -> int:
    model = ckpt.load_model(args.checkpoint)
    results = []
    for spec in args.data:
        ds = datamod.load_eval_dataset(spec, image_size=model.config.image_size)
        try:
            _check_dataset(model.config, ds, spec)
        except DataError as exc:
            raise CheckpointError(f"dataset does not match checkpoint config: {exc}") from exc
        loss, acc = eval_loop(model, ds, batch_size=args.batch_size)
        results.append((spec, acc))
    if len(results) == 1:
        print(f"accuracy={results[0][1]:.6f}")
    else:
        for spec, acc in results:
            print(f"accuracy={acc:.6f} data={spec}")
    return 0


def cmd_profile(args) -> int:
    model = ckpt.load_model(args.checkpoint)
    ds = datamod.load_eval_dataset(args.data, image_size=model.config.image_size)
    if len(ds) == 0:
        raise DataError("empty probe set")
    try:
        _check_dataset(model.config, ds, args.data)
    except DataError as exc:
        raise CheckpointError(f"dataset does not match checkpoint config: {exc}") from exc
    probe = profiler.run_probe(model, ds.images, batch_size=args.batch_size,
                               collect_values=True)
    report = profiler.energy_report(model, ds.images, probe=probe)
    rates = probe.firing_rates()
    os.makedirs(args.out, exist_ok=True)
    fileio.write_csv(os.path.join(args.out, "energy.csv"),
                     ("layer", "kind", "flops", "sops", "fr", "energy_pj"),
                     report.csv_rows())
    fileio.write_csv(os.path.join(args.out, "firing_rates.csv"),
                     ("layer", "spikes", "elements", "rate"),
                     [(r.layer, r.spikes, r.elements, f"{r.rate:.6f}") for r in rates.rows])
    for name, (centers, counts) in probe.histograms().items():
        safe = name.replace(".", "_")
        fileio.write_csv(os.path.join(args.out, f"hist_{safe}.csv"), ("bin_center", "count"),
                         zip(centers.tolist(), counts.tolist()))
    snn = profiler.energy_snn(report)
    ann = profiler.energy_ann(report)
    print(f"snn_total_energy_pj={snn!r}")
    print(f"ann_equivalent_energy_pj={ann!r}")
    return 0


def cmd_ablate(args) -> int:
    model_cfg, train_cfg = load_run_config(args.config)
    if args.seed is not None:
        train_cfg.seed = args.seed
    model_cfg = ModelConfig.from_kv({**model_cfg.to_kv(), "variant": args.variant})
    train_ds, test_ds = datamod.parse_data_spec(args.data, seed=train_cfg.seed,
                                                image_size=model_cfg.image_size)
    _check_dataset(model_cfg, train_ds, args.data)
    model = SpikeTransformer(model_cfg, seed=train_cfg.seed)
    history = train_loop(model, train_ds, test_ds, train_cfg,
                         log=lambda msg: print(msg, flush=True))
    acc = history[-1].test_acc
    ops, vmin, vmax = _ablation_ops(model, model_cfg, test_ds)
    energy_pj = (profiler.E_AC_PJ if args.variant == "ssa" else profiler.E_MAC_PJ) * ops
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "ablation.csv")
    header = "variant,acc,ops,energy_pj,value_min,value_max,config_hash"
    line = (f"{args.variant},{acc:.6f},{ops:.1f},{energy_pj:.1f},"
            f"{vmin!r},{vmax!r},{_config_hash(model_cfg, train_cfg)}")
    existing = []
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            existing = [ln for ln in fh.read().splitlines() if ln]
    if not existing:
        existing = [header]
    existing.append(line)
    fileio.atomic_write_text(path, "\n".join(existing) + "\n")
    print(line)
    return 0


def _ablation_ops(model: SpikeTransformer, config: ModelConfig,
                  test_ds: datamod.Dataset) -> tuple[float, float, float]:
    """Per-image attention-product op count plus product value range.

    SSA rows count measured synaptic accumulates; float variants count the
    dense product FLOPs (softmax rows add a 4-ops/element map surcharge).
    """
    probe = profiler.run_probe(model, test_ds.images, batch_size=64)
    vmin = min((rec["vmin"] for rec in probe.attn.values()), default=float("nan"))
    vmax = max((rec["vmax"] for rec in probe.attn.values()), default=float("nan"))
    if config.variant == "ssa":
        total = sum(rec["stage1"] + rec["stage2"] for rec in probe.attn.values())
        return total / probe.n_images, vmin, vmax
    n, h = config.num_patches, config.num_heads
    cost = flop_sop_cost(SsaConfig(embed_dim=config.embed_dim, num_heads=config.num_heads,
                                   scale=config.scale), n)
    per_block = cost.flops_qk_first * config.time_steps
    if config.variant in ("vsa", "vsa_floatv"):
        per_block += 4 * n * n * h * config.time_steps  # softmax exp/sum/div estimate
    return float(per_block * config.num_blocks), vmin, vmax


def cmd_export_attn(args) -> int:
    model = ckpt.load_model(args.checkpoint)
    cfg = model.config
    if not (0 <= args.block < cfg.num_blocks):
        raise ConfigError(f"block {args.block} out of range [0, {cfg.num_blocks})")
    if not (0 <= args.head < cfg.num_heads):
        raise ConfigError(f"head {args.head} out of range [0, {cfg.num_heads})")
    if not (0 <= args.t < cfg.time_steps):
        raise ConfigError(f"time step {args.t} out of range [0, {cfg.time_steps})")
    image = fileio.read_pgm(args.input)
    if image.shape != (cfg.image_size, cfg.image_size):
        raise DataError(f"input image {image.shape} does not match model size {cfg.image_size}")
    batch = image[None, None, :, :].astype(np.float32)
    if cfg.in_channels != 1:
        batch = np.repeat(batch, cfg.in_channels, axis=1)

    # Force the map-producing order so the N x N map exists for export.
    attn = model.blocks[args.block].attn
    attn.config.order = "qk_first"
    probe = profiler.run_probe(model, batch, batch_size=1, collect_values=True)
    rec = probe.attn[f"block{args.block}.attn"]
    attn_map = rec["last_map"][args.t, args.head]
    product = rec["last_product"][args.t, args.head]

    os.makedirs(args.out, exist_ok=True)
    stem = os.path.join(args.out, f"block{args.block}_head{args.head}_t{args.t}")
    fileio.atomic_write_text(stem + "_map.csv",
                             "\n".join(",".join(str(v) for v in row) for row in attn_map) + "\n")
    fileio.write_pgm(stem + "_map.pgm", attn_map)
    fileio.atomic_write_text(stem + "_output.csv",
                             "\n".join(",".join(str(v) for v in row) for row in product) + "\n")
    fileio.write_pgm(stem + "_output.pgm", product)
    print(f"wrote {stem}_map.{{csv,pgm}} and {stem}_output.{{csv,pgm}}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spikeformer",
                                     description="Spiking-transformer training and profiling")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--test-data", default=None)
    p.add_argument("--timing", action="store_true",
                   help="record real wall time in metrics.csv (breaks bitwise rerun equality)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, action="append")
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="energy and firing-rate profile")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--batch-size", type=int, default=64)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("ablate", help="train one attention variant and log its row")
    p.add_argument("--variant", required=True, choices=VARIANTS)
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-attn", help="export an attention map and product")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--block", type=int, required=True)
    p.add_argument("--head", type=int, required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_attn)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        _apply_thread_cap()
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ShapeError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 4
    except TrainingDiverged as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    except SpikeformerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
