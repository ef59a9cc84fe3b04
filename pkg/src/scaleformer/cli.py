"""Command-line entry point: train, eval, bench, export-features, gen-data.

Exit codes: 0 success, 1 runtime failure, 2 bad configuration or arguments,
3 non-finite loss during training.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from scaleformer import checkpoint as ckpt_io
from scaleformer.autodiff import Tensor, no_grad, serialize
from scaleformer.errors import ConfigError, NonFiniteError, ScaleFormerError
from scaleformer.fileio import atomic_write_text, read_pgm, to_uint8, write_pgm

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NONFINITE = 0, 1, 2, 3
SEED_ENV = "SCALEFORMER_SEED"


class UsageError(ConfigError):
    pass


# config resolution ----------------------------------------------------------------


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_configs(config_path=None, sets=(), flags=None, env=None):
    """defaults < preset < config file < SCALEFORMER_SEED < --set < explicit flags."""
    from scaleformer.model import MODEL_PRESETS, ModelConfig
    from scaleformer.training import TRAIN_PRESETS, TrainConfig

    env = os.environ if env is None else env
    file_cfg = {}
    if config_path:
        try:
            file_cfg = json.loads(Path(config_path).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {config_path}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise ConfigError(f"{config_path}: top level must be a JSON object")
        unknown = sorted(set(file_cfg) - {"model", "train", "model_preset", "train_preset"})
        if unknown:
            raise ConfigError(f"{config_path}: unknown top-level keys {unknown}")
    flags = dict(flags or {})
    model_preset = flags.pop("model_preset", None) or file_cfg.get("model_preset", "desk")
    train_preset = flags.pop("train_preset", None) or file_cfg.get("train_preset", "desk")
    if model_preset not in MODEL_PRESETS:
        raise ConfigError(f"unknown model preset {model_preset!r} (choose from {sorted(MODEL_PRESETS)})")
    if train_preset not in TRAIN_PRESETS:
        raise ConfigError(f"unknown train preset {train_preset!r} (choose from {sorted(TRAIN_PRESETS)})")
    model = {**ModelConfig().to_dict(), **MODEL_PRESETS[model_preset], **file_cfg.get("model", {})}
    train = {**TrainConfig().to_dict(), **TRAIN_PRESETS[train_preset], **file_cfg.get("train", {})}

    def assign(key: str, value) -> None:
        section, _, name = key.rpartition(".")
        targets = {"model": [model], "train": [train], "": [d for d in (model, train) if name in d]}.get(section)
        if targets is None:
            raise ConfigError(f"unknown config section in {key!r} (use model.<key> or train.<key>)")
        if not targets or any(name not in d for d in targets):
            raise ConfigError(f"unknown config key {key!r}")
        for d in targets:
            d[name] = value

    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
        assign("seed", seed)
    for item in sets:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        assign(key.strip(), _parse_value(value))
    for key, value in flags.items():
        if value is not None:
            assign(key, value)
    try:
        mcfg, tcfg = ModelConfig.from_dict(model), TrainConfig.from_dict(train)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    mcfg.validate()
    tcfg.validate()
    return mcfg, tcfg


# subcommands -------------------------------------------------------------------------


def _log(args, msg: str) -> None:
    if not getattr(args, "quiet", False):
        print(msg, flush=True)


def cmd_train(args) -> int:
    from scaleformer.data import generate_synthetic, load_dataset, stack
    from scaleformer.model import ScaleFormer
    from scaleformer.training import Trainer

    flags = {
        "model_preset": args.model_preset,
        "train_preset": args.preset,
        "train.epochs": args.epochs,
        "train.learning_rate": args.lr,
        "train.batch_size": args.batch_size,
        "train.checkpoint_every": args.checkpoint_every,
        "seed": args.seed,
    }
    if args.no_inter:
        flags["model.use_inter"] = False
    mcfg, tcfg = resolve_configs(args.config, args.set, flags)
    resume = None
    if args.resume:
        resume = ckpt_io.load_checkpoint(args.resume, expected_model=mcfg.to_dict())

    if args.data:
        images, masks, _ = load_dataset(args.data)
    else:
        images, masks = stack(generate_synthetic(tcfg.data_seed, tcfg.num_samples, mcfg.input_size, mcfg.num_classes))
    if images.shape[1:] != (mcfg.in_channels, mcfg.input_size, mcfg.input_size):
        raise ConfigError(f"training images {images.shape[1:]} do not match the model input")
    if masks.max() >= mcfg.num_classes:
        raise ConfigError(f"mask labels reach {masks.max()} but the model has {mcfg.num_classes} classes")

    model = ScaleFormer(mcfg)
    trainer = Trainer(model, tcfg, images, masks)
    if resume is not None:
        ckpt_io.restore_trainer(trainer, resume)
        _log(args, f"resumed from {args.resume} at epoch {trainer.epoch} step {trainer.step}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    snapshot = dict(resume.metrics) if resume is not None else {}
    while trainer.epoch < tcfg.epochs:
        rec = trainer.train_epoch()
        snapshot = {"loss": rec.loss, "dsc": rec.dsc}
        _log(args, f"epoch {rec.epoch}/{tcfg.epochs} step {rec.step} loss {rec.loss:.6f} dsc {rec.dsc:.4f}")
        if tcfg.checkpoint_every and rec.epoch % tcfg.checkpoint_every == 0:
            ckpt_io.save_checkpoint(ckpt_io.from_trainer(trainer, snapshot), out / "checkpoints" / f"epoch-{rec.epoch:04d}")
    final = ckpt_io.save_checkpoint(ckpt_io.from_trainer(trainer, snapshot), out / "final")
    if trainer.history:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "step", "loss", "dsc"])
        for r in trainer.history:
            w.writerow([r.epoch, r.step, f"{r.loss:.8f}", f"{r.dsc:.6f}"])
        atomic_write_text(out / "metrics.csv", buf.getvalue())
    _log(args, f"wrote {final}")
    return EXIT_OK


def _load_model(path):
    from scaleformer.model import ModelConfig, ScaleFormer

    ck = ckpt_io.load_checkpoint(path)
    model = ScaleFormer(ModelConfig.from_dict(ck.model_config))
    model.load_state_dict(ck.weights)
    model.eval()
    return model


def cmd_eval(args) -> int:
    from scaleformer.data import load_dataset
    from scaleformer.metrics import aggregate, evaluate, report_csv
    from scaleformer.training import predict

    model = _load_model(args.checkpoint)
    images, masks, names = load_dataset(args.data)
    cfg = model.cfg
    if images.shape[1:] != (cfg.in_channels, cfg.input_size, cfg.input_size):
        raise ConfigError(f"images {images.shape[1:]} do not match the model input")
    preds = predict(model, images, args.batch_size)
    rows = evaluate(preds, masks, cfg.num_classes, names, args.hd_percentile, args.spacing)
    text = report_csv(rows, cfg.num_classes)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    fg = [a for a in aggregate(rows, cfg.num_classes) if a["class"] == "foreground"]
    if fg and args.out:
        _log(args, f"mean foreground dsc {fg[0]['dsc']:.4f} iou {fg[0]['iou']:.4f} hd{args.hd_percentile:g} {fg[0]['hd']:.4f}")
    return EXIT_OK


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise UsageError(f"expected positive integers, got {text!r}")
    return values


def cmd_bench(args) -> int:
    from scaleformer.attention import AttentionVariant
    from scaleformer.bench import report_csv, run_sweep

    variants = [AttentionVariant.parse(v) for v in args.variants.split(",") if v.strip()]
    sizes = _int_list(args.sizes)
    channels = _int_list(args.channels)
    shapes = [(s, s, c) for c in channels for s in sizes]
    rows = run_sweep(shapes, variants, args.trials, args.heads, args.ratio, args.dw_kernel, args.threads)
    text = report_csv(rows)
    if args.out:
        atomic_write_text(args.out, text)
    else:
        sys.stdout.write(text)
    if args.svg:
        from scaleformer.plotting import save_macs_figure

        save_macs_figure(rows, args.svg)
    return EXIT_OK


def cmd_export_features(args) -> int:
    model = _load_model(args.checkpoint)
    cfg = model.cfg
    image = read_pgm(args.image).astype(np.float64) / 255.0
    if image.shape != (cfg.input_size, cfg.input_size) or cfg.in_channels != 1:
        raise ConfigError(f"image {image.shape} does not match the model input {cfg.input_size}x{cfg.input_size}")
    with no_grad():
        model(Tensor(image[None, None].astype(model.parameters()[0].dtype)), keep_features=True)
    kind = args.kind or ("trans" if args.stage in model.features["trans"] else "cnn")
    feats = model.features.get(kind, {})
    if args.stage not in feats:
        raise ConfigError(f"no {kind!r} feature at stage {args.stage} (available: {sorted(feats)})")
    fmap = feats[args.stage].data[0]
    out = Path(args.out)
    write_pgm(out.with_suffix(".pgm"), to_uint8(fmap.mean(axis=0)))
    serialize.save(out, {"feature": fmap}, {"stage": args.stage, "kind": kind})
    _log(args, f"wrote {out.with_suffix('.pgm')} ({kind} stage {args.stage}, {fmap.shape})")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    from scaleformer.data import generate_synthetic, save_dataset

    samples = generate_synthetic(args.seed, args.n, args.size, args.classes, args.noise)
    save_dataset(samples, args.out)
    _log(args, f"wrote {len(samples)} samples to {args.out}")
    return EXIT_OK


# parser ----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scaleformer", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1, deterministic)")
    p.add_argument("--quiet", action="store_true")
    # Same options after the subcommand; SUPPRESS keeps the top-level values when absent.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    common.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", parents=[common], help="train on synthetic shapes or a PGM dataset")
    t.add_argument("--config", help="JSON file with optional model/train sections")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--data", help="PGM dataset directory (default: synthetic data from the config)")
    t.add_argument("--preset", help="train preset: desk, synapse, acdc, monuseg")
    t.add_argument("--model-preset", help="model preset: desk, resnet34")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--checkpoint-every", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--no-inter", action="store_true", help="drop the inter-scale block")
    t.add_argument("--resume", help="checkpoint directory to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="per-class DSC/IoU/HD on a PGM dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="CSV path (default stdout)")
    e.add_argument("--hd-percentile", type=float, default=95.0)
    e.add_argument("--spacing", type=float, default=1.0)
    e.add_argument("--batch-size", type=int, default=4)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", parents=[common], help="MAC/params/time sweep of the attention variants")
    b.add_argument("--variants", default="original,spatial_reduction,axial,dualaxis")
    b.add_argument("--sizes", default="8,16,32")
    b.add_argument("--channels", default="4")
    b.add_argument("--heads", type=int, default=1)
    b.add_argument("--ratio", type=int, default=2, help="spatial-reduction ratio")
    b.add_argument("--dw-kernel", type=int, default=3)
    b.add_argument("--trials", type=int, default=5)
    b.add_argument("--out", help="CSV path (default stdout)")
    b.add_argument("--svg", help="also write a log-log MAC plot")
    b.set_defaults(func=cmd_bench)

    x = sub.add_parser("export-features", parents=[common], help="dump one stage's feature map")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--image", required=True, help="8-bit PGM input")
    x.add_argument("--stage", type=int, required=True)
    x.add_argument("--kind", choices=["cnn", "trans", "inter", "decoder"])
    x.add_argument("--out", required=True, help="output stem: writes .pgm, .bin and .json")
    x.set_defaults(func=cmd_export_features)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic PGM dataset")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=16)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with threadpool_limits(args.threads):
            return args.func(args)
    except NonFiniteError as exc:
        print(f"error: non-finite value: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScaleFormerError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
