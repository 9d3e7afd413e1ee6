"""``rtfnet`` command-line front end.

Exit codes: 0 success, 1 usage error, 2 runtime error. Every flag is
long-form; seeds default to 0.
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import astuple, fields

from .checkpoint import load_checkpoint
from .data import atomic_write_bytes, list_images, read_image, write_image
from .metrics import compare_report, table_key
from .model import ArchConfig
from .noise import NoiseConfig, add_salt_pepper
from .trainer import EvalRow, TrainConfig, derive_seed, denoise, evaluate_image, fit

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
_EVAL_TAG = 5
EVAL_HEADER = ["image", "level"] + [f.name for f in fields(EvalRow)][1:]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _level(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"noise level must be in [0, 1], got {v}")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="rtfnet", description="Salt-and-pepper denoising with RTF-Net.", allow_abbrev=False)
    p.add_argument("--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    a = sub.add_parser("add-noise", help="corrupt an image with salt-and-pepper noise", allow_abbrev=False)
    a.add_argument("--input", required=True)
    a.add_argument("--output", required=True)
    a.add_argument("--level", type=_level, required=True, help="corruption probability p")
    a.add_argument("--seed", type=_seed, default=0)

    d = TrainConfig()
    t = sub.add_parser("train", help="train a model for one noise level", allow_abbrev=False)
    t.add_argument("--data-dir", required=True, help="directory of training PGM/PPM images")
    t.add_argument("--val-dir", required=True, help="directory of held-out PGM/PPM images")
    t.add_argument("--checkpoint", required=True, help="checkpoint written after every epoch")
    t.add_argument("--metrics-csv", help="per-epoch curves")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--noise-level", type=_level, default=d.noise_level)
    t.add_argument("--epochs", type=_positive_int, default=d.epochs)
    t.add_argument("--batch-size", type=_positive_int, default=d.batch_size)
    t.add_argument("--base-lr", type=float, default=d.base_lr)
    t.add_argument("--step-size", type=_positive_int, default=d.step_size)
    t.add_argument("--gamma", type=float, default=d.gamma)
    t.add_argument("--patches-per-image", type=_positive_int, default=d.patches_per_image)
    t.add_argument("--patch-size", type=_positive_int, default=d.patch_size)
    t.add_argument("--seed", type=_seed, default=0)
    arch = ArchConfig()
    t.add_argument("--channels", type=int, choices=(1, 3), default=arch.channels)
    t.add_argument("--features", type=_positive_int, default=arch.features)
    t.add_argument("--nsn-depth", type=_positive_int, default=arch.nsn_depth)
    t.add_argument("--sen-depth", type=_positive_int, default=arch.sen_depth)
    t.add_argument("--cvt-depth", type=_positive_int, default=arch.cvt_depth)
    t.add_argument("--heads", type=_positive_int, default=arch.heads)

    n = sub.add_parser("denoise", help="restore one image", allow_abbrev=False)
    n.add_argument("--checkpoint", required=True)
    n.add_argument("--input", required=True)
    n.add_argument("--output", required=True)
    n.add_argument("--dump-nsn", metavar="PATH", help="also write the intermediate NSN image")

    e = sub.add_parser("eval", help="PSNR rows for every image in a directory", allow_abbrev=False)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--input-dir", required=True, help="directory of clean PGM/PPM images")
    e.add_argument("--level", type=_level, required=True)
    e.add_argument("--seed", type=_seed, default=0)
    e.add_argument("--output", help="also write the rows as CSV")

    c = sub.add_parser("compare", help="merge eval rows with the published baselines", allow_abbrev=False)
    c.add_argument("--rows", nargs="*", default=[], metavar="CSV", help="CSV files written by 'eval --output'")
    c.add_argument("--output", help="also write the report to this file")
    return p


# ---------------------------------------------------------------------------
# subcommands


def cmd_add_noise(args) -> int:
    img = read_image(args.input)
    write_image(add_salt_pepper(img, NoiseConfig(args.level, args.seed)), args.output)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = TrainConfig(
        noise_level=args.noise_level,
        epochs=args.epochs,
        batch_size=args.batch_size,
        base_lr=args.base_lr,
        step_size=args.step_size,
        gamma=args.gamma,
        patches_per_image=args.patches_per_image,
        patch_size=args.patch_size,
        seed=args.seed,
        data_dir=args.data_dir,
        val_dir=args.val_dir,
        checkpoint=args.checkpoint,
        metrics_csv=args.metrics_csv,
    )
    arch = ArchConfig(
        channels=args.channels,
        features=args.features,
        nsn_depth=args.nsn_depth,
        sen_depth=args.sen_depth,
        cvt_depth=args.cvt_depth,
        heads=args.heads,
    )
    ckpt, records = fit(cfg, arch, resume=args.resume)
    if records:
        last = records[-1]
        print(f"epoch {last.epoch}: train psnr {last.train_psnr:.3f} dB, val psnr {last.val_psnr:.3f} dB")
    print(f"checkpoint at epoch {ckpt.epoch} written to {cfg.checkpoint}")
    return EXIT_OK


def _load_model(path):
    return load_checkpoint(path).model


def cmd_denoise(args) -> int:
    mp = _load_model(args.checkpoint)
    restored, transition = denoise(mp, read_image(args.input))
    write_image(restored, args.output)
    if args.dump_nsn:
        write_image(transition, args.dump_nsn)
    return EXIT_OK


def _threads() -> int:
    raw = os.environ.get("RTFNET_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"RTFNET_THREADS must be an integer, got {raw!r}")
    return max(1, n)


def eval_rows(mp, directory, level: float, seed: int) -> list[EvalRow]:
    """One row per image; the noise seed for image i is derived from (seed, i)."""
    paths = list_images(directory)
    if not paths:
        raise FileNotFoundError(f"no PGM/PPM images in {directory}")

    def one(i):
        return evaluate_image(mp, paths[i].stem, read_image(paths[i]), level, derive_seed(seed, _EVAL_TAG, i))

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        rows = list(pool.map(one, range(len(paths))))
    return sorted(rows, key=lambda r: r.image)


def format_eval_csv(rows, level: float) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_HEADER)
    for r in rows:
        name, *vals = astuple(r)
        w.writerow([name, format(level, "g")] + [format(v, ".4f") for v in vals])
    return buf.getvalue()


def cmd_eval(args) -> int:
    mp = _load_model(args.checkpoint)
    text = format_eval_csv(eval_rows(mp, args.input_dir, args.level, args.seed), args.level)
    sys.stdout.write(text)
    if args.output:
        atomic_write_bytes(args.output, text.encode("utf-8"))
    return EXIT_OK


def read_eval_csv(path) -> list[tuple[str, float, float]]:
    """(image, level, denoised psnr) triples from an ``eval --output`` file."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != EVAL_HEADER:
            raise ValueError(f"{path}: not an eval CSV (header {header})")
        return [(r[0], float(r[1]), float(r[3])) for r in reader]


def cmd_compare(args) -> int:
    measured = {}
    for path in args.rows:
        for image, level, value in read_eval_csv(path):
            try:
                measured[table_key(image, level)] = value
            except KeyError:
                print(f"note: no baseline row for {image} at {level:g}, skipped", file=sys.stderr)
    text = compare_report(measured)
    sys.stdout.write(text)
    if args.output:
        atomic_write_bytes(args.output, text.encode("utf-8"))
    return EXIT_OK


_COMMANDS = {
    "add-noise": cmd_add_noise,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "eval": cmd_eval,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, KeyError, FloatingPointError, RuntimeError) as exc:
        print(f"rtfnet {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
