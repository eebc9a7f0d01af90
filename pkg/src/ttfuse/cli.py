"""ttfuse command line: generate-phantoms, train, fuse, eval, bench.

Exit codes: 0 success, 1 usage or config error, 2 data error (images,
checkpoints, datasets, output paths), 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import evaluation, imageio
from .config import load_config
from .errors import ConfigError, DatasetError, FusionError, ImageIOError, NumericError, ShapeError
from .fusion import TTTConfig, fuse_pipeline
from .phantom import PairDataset, split, write_corpus
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

log = logging.getLogger("ttfuse")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _loss_log_path(ckpt):
    ckpt = Path(ckpt)
    return ckpt.with_name(ckpt.stem + ".loss.csv")


def _echo_config(cfg):
    for line in cfg.describe():
        log.info("config %s", line)


def _dataset(cfg):
    return PairDataset(cfg.dataset_root)


# -- commands ---------------------------------------------------------------

def cmd_generate_phantoms(args):
    if args.count < 1:
        raise DatasetError(f"--count must be >= 1, got {args.count}")
    write_corpus(args.out, args.count, args.size, args.seed)
    print(f"wrote {args.count} pairs ({args.size}x{args.size}) to {args.out}")


def cmd_train(args):
    cfg = load_config(args.config)
    _echo_config(cfg)
    ds = _dataset(cfg)
    names, _ = split(ds.names, cfg["eval.test_count"], evaluation.split_seed(cfg["train.seed"], 0))
    log.info("training on %d of %d pairs", len(names), len(ds))
    tc = TrainConfig(epochs=cfg["train.epochs"], batch_size=cfg["train.batch_size"],
                     seed=cfg["train.seed"], mapper=cfg["fusion.mapper"])
    result = train(ds.load_many(names), tc)
    out = Path(args.out)
    imageio.writable_dir(out.parent if str(out.parent) else ".")
    save_checkpoint(result.network, out)
    loss_path = _loss_log_path(out)
    with open(loss_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss", "lr"])
        for epoch, loss, lr in result.log:
            writer.writerow([epoch, repr(loss), repr(lr)])
    print(f"checkpoint {out}, loss log {loss_path}")


def cmd_fuse(args):
    net = load_checkpoint(args.ckpt)
    a, _ = imageio.to_gray(imageio.load(args.a))
    b, chroma = imageio.to_gray(imageio.load(args.b))
    if a.shape != b.shape:
        raise ShapeError(f"image dimensions differ: {args.a} is {a.shape[1]}x{a.shape[0]}, "
                         f"{args.b} is {b.shape[1]}x{b.shape[0]}")
    ttt = TTTConfig(steps=args.ttt_steps, lr=args.ttt_lr)
    result = fuse_pipeline(net, a, b, ttt)
    image = imageio.merge_luma(result.image, chroma) if chroma is not None else result.image
    imageio.save(args.out, image)
    if result.trace:
        print("ttt loss trace: " + " ".join(f"{v:.6f}" for v in result.trace))
    print(f"wrote {args.out}")


def _protocol(args, timed):
    cfg = load_config(args.config)
    _echo_config(cfg)
    net = load_checkpoint(args.ckpt)
    ds = _dataset(cfg)
    ttt = TTTConfig(steps=cfg["fusion.ttt_steps"], lr=cfg["fusion.ttt_lr"])
    methods = [evaluation.TTT_METHOD]
    if not getattr(args, "no_baselines", False):
        methods += evaluation.BASELINE_METHODS

    def report(r, run):
        for m in sorted(run.means):
            vals = " ".join(f"{k}={run.means[m][k]:.4f}" for k in evaluation.METRIC_NAMES)
            log.info("run %d %s %s", r, m, vals)

    runs = evaluation.run_protocol(net, ds, cfg["eval.test_count"], cfg["eval.repeats"],
                                   cfg["train.seed"], ttt, methods, args.threads, timed, report)
    return cfg, runs


def cmd_eval(args):
    cfg, runs = _protocol(args, timed=False)
    table = evaluation.aggregate(runs)
    evaluation.write_table(args.out, cfg.dataset_root.name, table)
    print(f"wrote {args.out} ({len(table)} methods, {len(runs)} runs)")


def cmd_bench(args):
    cfg, runs = _protocol(args, timed=True)
    table = evaluation.aggregate(runs)
    evaluation.write_table(args.out, cfg.dataset_root.name, table, timing=True)
    if args.runs_out:
        evaluation.write_runs(args.runs_out, runs)
    print(f"wrote {args.out} ({len(table)} strategies, {len(runs)} runs)")


# -- parser -----------------------------------------------------------------

def build_parser():
    p = _Parser(prog="ttfuse", description="Multimodal medical image fusion with test-time training.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate-phantoms", help="render a synthetic paired corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, default=184)
    g.add_argument("--size", type=int, default=128)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate_phantoms)

    t = sub.add_parser("train", help="train the autoencoder")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("fuse", help="fuse one registered pair")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--a", required=True, help="first modality (e.g. MRI)")
    f.add_argument("--b", required=True, help="second modality (CT, or color SPECT/PET)")
    f.add_argument("--out", required=True)
    f.add_argument("--ttt-steps", type=int, default=5)
    f.add_argument("--ttt-lr", type=float, default=1e-5)
    f.set_defaults(func=cmd_fuse)

    for name, func, helptext in (("eval", cmd_eval, "repeated-split method comparison"),
                                 ("bench", cmd_bench, "fusion strategy comparison with timing")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--ckpt", required=True)
        e.add_argument("--config", required=True)
        e.add_argument("--out", required=True, help="results CSV")
        e.add_argument("--threads", type=int, default=None,
                       help="pair-level worker threads (default: TTFUSE_THREADS or CPU count)")
        if name == "eval":
            e.add_argument("--no-baselines", action="store_true")
        else:
            e.add_argument("--runs-out", default=None, help="optional per-run CSV")
        e.set_defaults(func=func)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr, force=True)
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ImageIOError, DatasetError, ShapeError, FusionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
