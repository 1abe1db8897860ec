"""Command-line entry point.

    shf train --config run.cfg [--threads N] [--seed S] [--preset NAME]
    shf gen-curves --count N --side S --seed K --out curves.rawmat
    shf convert-idx --in train-images-idx3-ubyte --out mnist.rawmat
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys

import numpy as np

from . import data
from .config import PRESETS, RunConfig, parse_config
from .driver import train
from .errors import ConfigError, ContractError, ParseError
from .weights import NetworkSpec

log = logging.getLogger("shf")

METRIC_KEYS = ("iter", "t_wall", "n", "lambda", "gamma", "lsmr_iters", "lsmr_reason",
               "f_batch_pre", "f_batch_post", "f_val", "step", "n_hat")


def load_dataset(cfg: RunConfig) -> data.Dataset:
    src = cfg.dataset
    if src.format == "synthetic":
        return data.gen_curves(src.count, src.side, np.random.default_rng(src.seed))
    if src.format == "rawmat":
        return data.load_rawmat(src.path)
    return data.load_idx(src.path)


def resolve_split(cfg: RunConfig, N: int) -> data.SplitSpec:
    if cfg.split is not None:
        return cfg.split
    n_test = n_val = max(1, N // 10)
    return data.SplitSpec(N - n_test - n_val, n_test, n_val, seed=0)


def _json_float(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def emit_report(report, cfg: RunConfig, out_dir: str) -> dict:
    """Write ``report.json`` and the best-weights checkpoint; return the report dict.

    Losses are ``f`` (half the mean squared error per row); the ``*_error``
    fields carry ``2 f`` so either convention can be compared.
    """
    os.makedirs(out_dir, exist_ok=True)
    weights_path = os.path.join(out_dir, "weights.rawmat")
    data.save_weights(weights_path, report.best_w)
    body = {
        "train_loss": report.train_loss,
        "val_loss": report.val_loss,
        "test_loss": report.test_loss,
        "train_error": 2.0 * report.train_loss,
        "val_error": 2.0 * report.val_loss,
        "test_error": 2.0 * report.test_loss,
        "initial_train_loss": report.initial_train_loss,
        "best_iter": report.best_iter,
        "iterations": len(report.records),
        "stopped_by": report.stopped_by,
        "wall_time": report.wall_time,
        "seed": cfg.train.seed,
        "layer_dims": cfg.layer_dims(),
        "weights": "weights.rawmat",
        "config": {k: _json_float(v) for k, v in dataclasses.asdict(cfg.train).items()},
        "preset": cfg.preset,
    }
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return body


def run(cfg: RunConfig) -> int:
    """Train per ``cfg`` and write metrics, report and checkpoint. Returns an exit code."""
    try:
        ds = load_dataset(cfg)
        if cfg.encoder_dims[0] != ds.X.shape[1]:
            raise ConfigError(
                f"encoder_dims starts with {cfg.encoder_dims[0]} but the data has "
                f"{ds.X.shape[1]} columns"
            )
        train_x, test_x, val_x = data.split(ds, resolve_split(cfg, ds.N))
        spec = NetworkSpec(tuple(cfg.layer_dims()))
        os.makedirs(cfg.output_dir, exist_ok=True)
        metrics_path = os.path.join(cfg.output_dir, "metrics.jsonl")
        with open(metrics_path, "w", encoding="utf-8") as metrics:
            def write_record(rec):
                row = {k: _json_float(v) for k, v in rec.as_dict(timing=not cfg.deterministic).items()}
                metrics.write(json.dumps(row, sort_keys=True) + "\n")
                metrics.flush()

            report = train(cfg.train, spec, train_x, val_x, test_x, on_record=write_record)
        body = emit_report(report, cfg, cfg.output_dir)
    except (ConfigError, ParseError, ContractError) as exc:
        print(f"shf: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"shf: I/O error: {exc}", file=sys.stderr)
        return 3
    log.info("done: %s after %d iterations, test error %.4f",
             body["stopped_by"], body["iterations"], body["test_error"])
    return 0


def _limit_threads(n):
    if n is None:
        return None
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def cmd_train(args) -> int:
    try:
        cfg = parse_config(args.config, preset=args.preset)
        if args.seed is not None:
            cfg.train = dataclasses.replace(cfg.train, seed=args.seed)
        if args.output_dir and not os.environ.get("SHF_OUTPUT_DIR"):
            cfg.output_dir = args.output_dir
        if args.deterministic:
            cfg.deterministic = True
    except ConfigError as exc:
        print(f"shf: {exc}", file=sys.stderr)
        return 2
    limiter = _limit_threads(args.threads)
    try:
        return run(cfg)
    finally:
        if limiter is not None:
            limiter.restore_original_limits()


def cmd_gen_curves(args) -> int:
    try:
        ds = data.gen_curves(args.count, args.side, np.random.default_rng(args.seed))
        data.write_rawmat(args.out, ds.X)
    except ContractError as exc:
        print(f"shf: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"shf: I/O error: {exc}", file=sys.stderr)
        return 3
    return 0


def cmd_convert_idx(args) -> int:
    try:
        ds = data.load_idx(args.inp)
        data.write_rawmat(args.out, ds.X)
    except ParseError as exc:
        print(f"shf: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"shf: I/O error: {exc}", file=sys.stderr)
        return 3
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shf", description="Stochastic Hessian-free autoencoder training")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an autoencoder")
    p.add_argument("--config", required=True)
    p.add_argument("--threads", type=int, default=None, help="BLAS thread count (1 = reproducible)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--deterministic", action="store_true",
                   help="write t_wall as null so metrics are byte-reproducible")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gen-curves", help="write a synthetic curves dataset as RAWMATv1")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--side", type=int, default=28)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_curves)

    p = sub.add_parser("convert-idx", help="convert an IDX image file to RAWMATv1")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert_idx)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
