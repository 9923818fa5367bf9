"""``roigan`` command line: gen-data, train, eval, infer, check.

Exit codes: 0 ok, 1 check failure, 2 invalid arguments or config,
3 I/O failure, 4 training aborted on NaN, 5 checkpoint or file format error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

from . import config as C
from .checks import SUITES, format_table, run_suite
from .data import (
    FormatError, MaskStack, gen_phantom_dataset, load_dataset, overlay, save_dataset, split_dataset,
    stack_io_load, stack_io_save, write_pgm,
)
from .evaluation import evaluate
from .training import VARIANT_A_RESIZE_NOTE, Trainer, fit, predict_masks

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO, EXIT_NAN, EXIT_FORMAT = 0, 1, 2, 3, 4, 5

log = logging.getLogger("roigan")


class UsageError(Exception):
    pass


@contextmanager
def _thread_cap():
    raw = os.environ.get("ROIGAN_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"ROIGAN_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise UsageError("ROIGAN_THREADS must be at least 1")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=n):
        yield


# -- subcommands --------------------------------------------------------------

def cmd_gen_data(args) -> int:
    h, w = args.size
    if h <= 0 or w <= 0 or h % 64 or w % 64:
        raise UsageError(f"--size {h} {w}: both sides must be positive multiples of 64")
    if not 8 <= args.slices <= 16:
        raise UsageError(f"--slices {args.slices}: must be in [8, 16]")
    if args.stacks < 3:
        raise UsageError(f"--stacks {args.stacks}: need at least 3 to split train/val/test")
    stacks, masks = gen_phantom_dataset(args.stacks, (h, w), args.slices, args.seed)
    manifest = split_dataset([s.id for s in stacks], seed=args.seed)
    save_dataset(stacks, masks, manifest, args.out)
    print(f"wrote {len(stacks)} stacks ({len(manifest.train)}/{len(manifest.val)}/{len(manifest.test)}) to {args.out}")
    return EXIT_OK


def resolve_config(args) -> dict:
    values = C.defaults()
    if args.config is not None:
        values.update(C.load_config_file(args.config))
    for key in C.KEYS:
        if hasattr(args, key.name):
            values[key.name] = C.parse_value(key.name, getattr(args, key.name))
    return values


def cmd_train(args) -> int:
    values = resolve_config(args)
    dataset = load_dataset(values["data"])
    first = next(iter(dataset.stacks.values()))
    cfg = C.to_train_config(values, tuple(first.slices.shape[-2:]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    trainer = None
    if args.resume and (out / "last.ckpt").exists():
        trainer = Trainer.from_checkpoint(out / "last.ckpt")
        if trainer.cfg.to_dict() | {"epochs": cfg.epochs} != cfg.to_dict():
            raise UsageError(f"{out / 'last.ckpt'} was trained with a different config")
        print(f"resuming from epoch {trainer.epoch}")
    (out / "config.txt").write_text(C.dump_config(values))

    def report(row):
        print(f"epoch {row['epoch']:3d}  mse {row['train_mse']:.5f}  gan_g {row['train_gan_g']:.4f}  "
              f"gan_d {row['train_gan_d']:.4f}  val_dice {row['val_dice_mean']:.4f}", flush=True)

    history = fit(dataset, cfg, out, trainer=trainer, on_epoch=report)
    if history:
        best = max(history, key=lambda r: r["val_dice_mean"])
        print(f"best val Dice {best['val_dice_mean']:.4f} at epoch {best['epoch']}; checkpoints in {out}")
    return EXIT_OK


def _load_trainer(path) -> Trainer:
    try:
        return Trainer.from_checkpoint(path)
    except (KeyError, ValueError, TypeError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"{path}: checkpoint does not match its config: {e}") from None


def cmd_eval(args) -> int:
    trainer = _load_trainer(args.checkpoint)
    dataset = load_dataset(args.data)
    note = VARIANT_A_RESIZE_NOTE if trainer.cfg.variant == "roigan_a" else None
    try:
        report = evaluate(trainer.global_gen, dataset, args.split, args.out, resize_note=note)
    except ValueError as e:
        raise UsageError(str(e)) from None
    print(f"{'region':<6} {'DI mean':>8} {'DI sd':>7} {'HD mean':>8} {'HD sd':>7}")
    for region in ("top", "mid", "low", "all"):
        r = report.summary[region]
        print(f"{region:<6} {r['di_mean']:8.4f} {r['di_sd']:7.4f} {r['hd_mean']:8.3f} {r['hd_sd']:7.3f}")
    print(f"area regression: slope {report.slope:.4f} intercept {report.intercept:.2f} R {report.r:.4f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    trainer = _load_trainer(args.checkpoint)
    stack, _ = stack_io_load(args.stack)
    size = tuple(trainer.cfg.image_size)
    if tuple(stack.slices.shape[-2:]) != size:
        raise FormatError(f"{args.stack}: slices are {stack.slices.shape[-2:]}, the model expects {size}")
    pred = predict_masks(trainer.global_gen, stack)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.stack).stem
    stack_io_save(stack, MaskStack(stack.id, pred), out / f"{stem}_pred.rvs")
    for s in range(pred.shape[0]):
        write_pgm(out / f"{stem}_s{s:02d}_mask.pgm", pred[s, 0] * 255)
        write_pgm(out / f"{stem}_s{s:02d}_overlay.pgm", overlay(stack.slices[s, 0], pred[s, 0]))
    print(f"wrote {out / f'{stem}_pred.rvs'} and {2 * pred.shape[0]} PGM files")
    return EXIT_OK


def cmd_check(args) -> int:
    t0 = time.perf_counter()
    results = run_suite(args.suite)
    print(format_table(results, time.perf_counter() - t0))
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


# -- parser -------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="roigan", description="RV segmentation with coupled ROI-GAN training.", formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log at INFO level")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="generate a phantom dataset", formatter_class=fmt)
    g.add_argument("--out", default="data", help="output directory")
    g.add_argument("--stacks", type=int, default=10, help="number of stacks")
    g.add_argument("--size", type=int, nargs=2, default=[64, 64], metavar=("H", "W"), help="slice size, multiples of 64")
    g.add_argument("--slices", type=int, default=10, help="slices per stack, 8 to 16")
    g.add_argument("--seed", type=int, default=0, help="base seed; stack i uses seed + i")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a generator (and discriminators)", formatter_class=fmt)
    t.add_argument("--config", default=None, help="key = value config file; flags override it")
    t.add_argument("--out", default="run", help="output directory for history.csv and checkpoints")
    t.add_argument("--resume", action="store_true", help="continue from OUT/last.ckpt if present")
    for key in C.KEYS:
        t.add_argument(
            f"--{key.name.replace('_', '-')}", dest=key.name, default=argparse.SUPPRESS, metavar="VALUE",
            help=f"{key.help} (default: {key.default})",
        )
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on one split", formatter_class=fmt)
    e.add_argument("--checkpoint", required=True, help="checkpoint file")
    e.add_argument("--data", default="data", help="dataset directory")
    e.add_argument("--split", default="test", choices=("train", "val", "test"), help="split to score")
    e.add_argument("--out", default="eval", help="output directory for CSVs and overlays")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("infer", help="segment one .rvs stack", formatter_class=fmt)
    i.add_argument("--checkpoint", required=True, help="checkpoint file")
    i.add_argument("--stack", required=True, help="input .rvs file")
    i.add_argument("--out", default="infer", help="output directory")
    i.set_defaults(func=cmd_infer)

    c = sub.add_parser("check", help="run property suites", formatter_class=fmt)
    c.add_argument("--suite", default="all", choices=SUITES, help="suite to run")
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"roigan: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with _thread_cap():
            return args.func(args)
    except (UsageError, C.ConfigError) as e:
        print(f"roigan: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as e:
        print(f"roigan: training aborted: {e}", file=sys.stderr)
        return EXIT_NAN
    except FormatError as e:
        print(f"roigan: format error: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except ValueError as e:
        print(f"roigan: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"roigan: I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
