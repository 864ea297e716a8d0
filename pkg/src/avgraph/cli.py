"""Command-line entry point: ``avgraph {synth,map,train,eval,bench,sweep-m}``.

Exit codes: 0 success, 2 usage error, 3 invalid input value, 4 missing or
unreadable file, 5 malformed container file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import re
import sys
import time
from contextlib import contextmanager

import numpy as np

from . import nn
from .avg import avg_forward, init_bank
from .diffpool import AvgNetParams
from .errors import ContainerError
from .graphio import FORMATS, read_series, write_graph
from .signal import MODULATIONS, read_dataset, split_stratified, synthesize_dataset, write_dataset
from .train import TrainConfig, evaluate, sweep_m, train, write_metrics_log, write_report
from .visibility import hvg, lpvg, vg_fast, vg_naive

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_FILE, EXIT_FORMAT = 0, 2, 3, 4, 5

_NEGATIVE_OK = {"--snrs"}


def parse_snr_range(text: str) -> list[int]:
    """``lo..hi:step`` (inclusive, step defaults to 2) or a comma list."""
    m = re.fullmatch(r"\s*(-?\d+)\.\.(-?\d+)(?::(\d+))?\s*", text)
    if m:
        lo, hi, step = int(m[1]), int(m[2]), int(m[3] or 2)
        if step <= 0 or hi < lo:
            raise ValueError(f"bad SNR range {text!r}")
        return list(range(lo, hi + 1, step))
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise ValueError(f"bad SNR range {text!r}; expected lo..hi:step") from None


def parse_int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValueError(f"bad integer list {text!r}") from None


@contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="") as fh:
            yield fh


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        initial_lr=args.lr,
        lr_decay=args.lr_decay,
        decay_every=args.decay_every,
        decay_unit=args.decay_unit,
        m=args.m,
        hidden=args.hidden,
        clusters=args.clusters,
        embed_depth=args.embed_depth,
        pool_depth=args.pool_depth,
        post_depth=args.post_depth,
        conv_bias=not args.no_bias,
        share_weights=args.share_weights,
        aux_loss=args.aux_loss,
        seed=args.seed,
    )


def _datasets(args):
    train_ds = read_dataset(args.train)
    if args.val:
        return train_ds, read_dataset(args.val)
    return split_stratified(train_ds, 1.0 - args.val_fraction, args.seed)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    classes = [c.strip() for c in args.classes.split(",") if c.strip()]
    for c in classes:
        if c not in MODULATIONS:
            raise ValueError(f"unknown class {c!r}; choose from {', '.join(MODULATIONS)}")
    snrs = parse_snr_range(args.snrs)
    ds = synthesize_dataset(classes, snrs, args.per_cell, args.len, args.seed)
    write_dataset(ds, args.out)
    print(f"wrote {len(ds)} frames ({len(classes)} classes x {len(snrs)} SNRs x {args.per_cell}) to {args.out}")
    return EXIT_OK


def cmd_map(args) -> int:
    with open(args.input) as fh:
        series = read_series(fh)
    if args.method == "vg":
        graph = vg_naive(series)
    elif args.method == "vg-fast":
        graph = vg_fast(series)
    elif args.method == "hvg":
        graph = hvg(series)
    elif args.method == "lpvg":
        graph = lpvg(series, args.L)
    else:
        if args.bank:
            bank = AvgNetParams.from_store(nn.read_checkpoint(args.bank)).bank(args.channel)
        elif args.seed is not None:
            bank = init_bank(args.m, args.seed)
        else:
            raise ValueError("--method avg needs --bank CHECKPOINT or --seed for a random bank")
        graph = avg_forward(series, bank)
    with _output(args.out) as fh:
        write_graph(graph, fh, args.format)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _train_config(args)
    train_ds, val_ds = _datasets(args)

    def show(e):
        print(f"epoch {e.epoch:3d}  loss {e.train_loss:.4f}  val_acc {e.val_accuracy:.4f}  lr {e.lr:.6g}", flush=True)

    result = train(train_ds, val_ds, cfg, on_epoch=show)
    nn.write_checkpoint(result.params.store, args.out)
    if args.log:
        write_metrics_log(result.history, args.log)
    size = result.params.param_bytes()
    print(f"best epoch {result.best_epoch}  val_acc {result.best_val_accuracy:.4f}")
    print(f"parameters {result.params.num_values()}  ({size} bytes, {size / 2**20:.3f} MB)")
    return EXIT_OK


def cmd_eval(args) -> int:
    ds = read_dataset(args.data)
    params = AvgNetParams.from_store(nn.read_checkpoint(args.checkpoint))
    report = evaluate(ds, params)
    paths = write_report(report, args.out_dir)
    print(f"accuracy {report.accuracy:.4f}  f1_macro {report.f1_macro:.4f}  recall_macro {report.recall_macro:.4f}")
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    vg_naive(rng.standard_normal(16))  # JIT warm-up
    vg_fast(rng.standard_normal(16))
    times = {"naive": [], "fast": []}
    for trial in range(args.trials):
        x = rng.standard_normal(args.n)
        t0 = time.perf_counter()
        g_naive = vg_naive(x)
        t1 = time.perf_counter()
        g_fast = vg_fast(x)
        t2 = time.perf_counter()
        times["naive"].append(t1 - t0)
        times["fast"].append(t2 - t1)
        print(f"trial {trial}: edges naive={g_naive.num_edges} fast={g_fast.num_edges} "
              f"identical={g_naive == g_fast}")
    naive, fast = np.mean(times["naive"]), np.mean(times["fast"])
    print(f"n={args.n} trials={args.trials} mean_naive_s={naive:.6f} mean_fast_s={fast:.6f} "
          f"speedup={naive / fast:.1f}x")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _train_config(args)
    train_ds, val_ds = _datasets(args)
    rows = sweep_m(train_ds, val_ds, cfg, parse_int_list(args.m_values))
    with _output(args.out) as fh:
        w = csv.writer(fh)
        w.writerow(["m", "val_accuracy"])
        for m, acc in rows:
            w.writerow([m, repr(acc)])
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--train", required=True, help="training dataset container")
    p.add_argument("--val", help="validation dataset container (default: split from --train)")
    p.add_argument("--val-fraction", type=float, default=0.2)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--lr", type=float, default=d.initial_lr)
    p.add_argument("--lr-decay", type=float, default=d.lr_decay)
    p.add_argument("--decay-every", type=int, default=d.decay_every)
    p.add_argument("--decay-unit", choices=("epoch", "batch"), default=d.decay_unit)
    p.add_argument("--m", type=int, default=d.m)
    p.add_argument("--hidden", type=int, default=d.hidden)
    p.add_argument("--clusters", type=int, default=d.clusters)
    p.add_argument("--embed-depth", type=int, default=d.embed_depth)
    p.add_argument("--pool-depth", type=int, default=d.pool_depth)
    p.add_argument("--post-depth", type=int, default=d.post_depth)
    p.add_argument("--no-bias", action="store_true", help="drop the AVG convolution biases")
    p.add_argument("--share-weights", action="store_true", help="one bank and branch for both channels")
    p.add_argument("--aux-loss", action="store_true", help="add DiffPool link/entropy penalties")
    p.add_argument("--seed", type=int, default=d.seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avgraph", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic modulation dataset")
    p.add_argument("--classes", default=",".join(MODULATIONS))
    p.add_argument("--snrs", default="-20..18:2", help="lo..hi:step, inclusive")
    p.add_argument("--per-cell", type=int, required=True)
    p.add_argument("--len", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("map", help="map a series (one value per line) to a graph")
    p.add_argument("--input", required=True)
    p.add_argument("--method", choices=("vg", "vg-fast", "hvg", "lpvg", "avg"), default="vg")
    p.add_argument("--L", type=int, default=1, help="LPVG penetration limit")
    p.add_argument("--m", type=int, default=11, help="AVG span for a random bank")
    p.add_argument("--bank", help="checkpoint supplying the AVG bank")
    p.add_argument("--channel", choices=("i", "q"), default="i")
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=FORMATS, default="edgelist")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("train", help="train AVGNet")
    _add_train_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch metrics CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time vg_naive against vg_fast")
    p.add_argument("--n", type=int, default=8192)
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep-m", help="validation accuracy across AVG spans")
    _add_train_flags(p)
    p.add_argument("--m-values", default="3,7,11")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_sweep)
    return parser


def _join_negative_values(argv: list[str]) -> list[str]:
    out, k = [], 0
    while k < len(argv):
        tok = argv[k]
        if tok in _NEGATIVE_OK and k + 1 < len(argv) and argv[k + 1].startswith("-"):
            out.append(f"{tok}={argv[k + 1]}")
            k += 2
        else:
            out.append(tok)
            k += 1
    return out


def main(argv: list[str] | None = None) -> int:
    argv = _join_negative_values(list(sys.argv[1:] if argv is None else argv))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ContainerError as exc:
        code, msg = EXIT_FORMAT, f"malformed file: {exc}"
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        code, msg = EXIT_FILE, f"cannot open {exc.filename}: {exc.strerror}"
    except ValueError as exc:
        code, msg = EXIT_INPUT, str(exc)
    print(f"avgraph: error: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
