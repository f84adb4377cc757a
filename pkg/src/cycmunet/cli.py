"""Command-line entry point: ``cycmunet {train,eval,infer,ablate}``.

Exit codes: 0 on success, 2 for configuration or input errors (including
argument errors), 3 when training aborts on a non-finite loss or gradient.
Every file a command writes lands under its ``--out`` directory.
"""
import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .checkpoint import load_checkpoint
from .config import build_sections, format_config, load_config_file
from .data import load_vimeo_triplets, make_sample, read_png, synth_triplets, write_png
from .errors import ConfigError, NonFiniteError
from .metrics import format_table, report_csv
from .trainer import ablate, comparison_csv, evaluate, train

log = logging.getLogger("cycmunet")

EXIT_OK, EXIT_CONFIG, EXIT_NAN = 0, 2, 3


# ---------------------------------------------------------------------------
# helpers

def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def load_samples(source, scale, seed=0, lr_size=32, split="tri_testlist.txt", rng=None):
    """``synth:N`` or a Vimeo-layout directory -> list of TrainSample at ``scale``."""
    if source.startswith("synth:"):
        try:
            count = int(source[len("synth:"):])
        except ValueError:
            raise ConfigError(f"bad synthetic data source {source!r}; expected synth:N") from None
        if count < 1:
            raise ConfigError("synth:N needs N >= 1")
        rng = rng if rng is not None else np.random.default_rng(seed)
        size = (lr_size * scale, lr_size * scale)
        return [make_sample(t, scale) for t in synth_triplets(count, size, rng)]
    root = Path(source)
    split_path = Path(split) if Path(split).is_absolute() else root / split
    if not split_path.is_file():
        raise ConfigError(f"split list {split_path} not found")
    samples = [make_sample(t, scale) for t in load_vimeo_triplets(root, split_path)]
    if not samples:
        raise ConfigError(f"no usable triplets under {root}")
    return samples


def _sections(args):
    """Config file values overridden by explicit flags."""
    values = load_config_file(args.config) if args.config else {}
    overrides = {"scale": args.scale, "total_epochs": args.epochs, "base_lr": args.lr,
                 "batch_size": args.batch_size, "patch": args.patch,
                 "steps_per_epoch": args.steps_per_epoch}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return build_sections(values)


def _inside(out, path):
    """Resolve ``path`` against ``out`` and refuse anything that escapes it."""
    out = Path(out).resolve()
    target = (out / path).resolve()
    if target != out and out not in target.parents:
        raise ConfigError(f"{path} is outside the output directory {out}")
    return target


def _to_tensor(frame):
    return torch.from_numpy(np.array(frame, dtype=np.float32))[None]


# ---------------------------------------------------------------------------
# commands

def cmd_train(args):
    config, schedule, weights, options = _sections(args)
    out = Path(args.out)
    rng = np.random.default_rng(args.seed)
    train_set = load_samples(args.data, config.scale, lr_size=args.lr_size, split=args.split, rng=rng)
    if args.val:
        val_set = load_samples(args.val, config.scale, args.seed, args.lr_size, split=args.val_split)
    elif args.data.startswith("synth:"):
        # held-out split drawn from the same stream, after the training triplets
        val_set = load_samples(f"synth:{args.val_count}", config.scale, lr_size=args.lr_size, rng=rng)
    else:
        val_set = None
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_config(config, schedule, weights, options), encoding="utf-8")
    state, history = train(config, train_set, schedule, args.seed, options, val_set, out, loss_weights=weights)
    log.info("finished at step %d; final loss %s", state.step, history.losses[-1] if history.losses else None)
    return EXIT_OK


def cmd_eval(args):
    state = load_checkpoint(args.ckpt)
    scale = args.scale if args.scale is not None else state.config.scale
    if scale != state.config.scale:
        raise ConfigError(f"data scale {scale} != checkpoint scale {state.config.scale}")
    samples = load_samples(args.data, scale, args.seed, args.lr_size, split=args.split)
    report = evaluate(state, samples, scale=scale, dataset=args.dataset or args.data)
    text = report_csv([report.row]) if args.report == "csv" else format_table([report.row])
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        name = "report.csv" if args.report == "csv" else "report.txt"
        (out / name).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def _dump_trace(out_dir, outputs):
    """Channel-mean feature maps as grayscale PNGs, one per representation and time index.

    Maps of one kind (HR or LR) share a single min/max normalisation so that
    intensities are comparable across units.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    names = ("0", "t", "1")
    for kind, reps in (("h", outputs.hr_reps), ("l", outputs.lr_reps)):
        maps = [[f[0].mean(dim=0) for f in rep.frames] for rep in reps]
        flat = torch.stack([m for row in maps for m in row])
        lo, hi = flat.min(), flat.max()
        span = (hi - lo).clamp_min(1e-12)
        for m, row in enumerate(maps, start=1):
            for name, fmap in zip(names, row):
                gray = ((fmap - lo) / span).numpy()
                write_png(out_dir / f"{kind}{m}_{name}.png", np.repeat(gray[None], 3, axis=0))


def cmd_infer(args):
    state = load_checkpoint(args.ckpt)
    frame0, frame1 = read_png(args.frame0), read_png(args.frame1)
    if frame0.shape != frame1.shape:
        raise ConfigError(f"input frames differ in size: {frame0.shape[1:]} vs {frame1.shape[1:]}")
    out = Path(args.out)
    trace_dir = _inside(out, args.dump_trace) if args.dump_trace else None
    model = state.model.eval()
    with torch.no_grad():
        outputs = model(_to_tensor(frame0), _to_tensor(frame1), keep_reps=trace_dir is not None)
    out.mkdir(parents=True, exist_ok=True)
    for name, frame in zip(("Lt", "H0", "Ht", "H1"), outputs.frames):
        write_png(out / f"{name}.png", frame[0].numpy())
    if trace_dir is not None:
        _dump_trace(trace_dir, outputs)
    return EXIT_OK


def cmd_ablate(args):
    config, schedule, weights, options = _sections(args)
    rng = np.random.default_rng(args.seed)
    train_set = load_samples(args.data, config.scale, lr_size=args.lr_size, split=args.split, rng=rng)
    if args.val:
        val_set = load_samples(args.val, config.scale, args.seed, args.lr_size, split=args.val_split)
    else:
        val_set = load_samples(f"synth:{args.val_count}", config.scale, lr_size=args.lr_size, rng=rng)
    kw = dict(schedule=schedule, options=options, seed=args.seed, max_steps=args.max_steps, dataset=args.data,
              loss_weights=weights)
    if args.variants is not None:
        variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        unknown = [v for v in variants if v not in ("a", "b", "c", "d")]
        if unknown or not variants:
            raise ConfigError(f"unknown ablation variant(s): {unknown or args.variants!r}")
        rows = [ablate(v, config, train_set, val_set, **kw) for v in variants]
    else:
        rows = [ablate(config.variant, config.replace(num_units=m), train_set, val_set, **kw)
                for m in args.sweep_m]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = comparison_csv(rows)
    (out / "ablation.csv").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _add_training_flags(p):
    p.add_argument("--config", help="key = value config file (ModelConfig/Schedule/TrainOptions fields)")
    p.add_argument("--data", required=True, help="Vimeo-layout directory or synth:N")
    p.add_argument("--split", default="tri_trainlist.txt", help="split list for --data (relative to it)")
    p.add_argument("--val", help="validation data: directory or synth:N")
    p.add_argument("--val-split", default="tri_testlist.txt")
    p.add_argument("--val-count", type=int, default=32, help="held-out synthetic triplets when --data is synth")
    p.add_argument("--scale", type=int, choices=(2, 4, 8))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patch", type=int, help="LR crop size")
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--lr-size", type=int, default=32, help="LR side of synthetic frames")


def build_parser():
    parser = argparse.ArgumentParser(prog="cycmunet", description="Space-time video super-resolution toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoints + metrics.csv")
    _add_training_flags(p)
    p.add_argument("--out", default="runs/train")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint (ST-VSR / S-VSR / T-VSR)")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="tri_testlist.txt")
    p.add_argument("--report", choices=("csv", "table"), default="table")
    p.add_argument("--scale", type=int, choices=(2, 4, 8))
    p.add_argument("--seed", type=int, default=0, help="seed for synth:N data")
    p.add_argument("--lr-size", type=int, default=32)
    p.add_argument("--dataset", help="name for the report row")
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="interpolate and upscale one frame pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--frame0", required=True)
    p.add_argument("--frame1", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-trace", nargs="?", const="trace", metavar="DIR",
                   help="write feature-map PNGs to DIR inside --out (default: trace)")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("ablate", help="train ablation variants or an M sweep under one budget")
    _add_training_flags(p)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--variants", help="comma-separated subset of a,b,c,d")
    group.add_argument("--sweep-m", type=_int_list, help="comma-separated unit counts, e.g. 2,4,6")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--out", default="runs/ablate")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NAN
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
