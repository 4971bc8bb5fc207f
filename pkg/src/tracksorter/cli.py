"""Command-line entry point: ``tracksorter <stage> --out RUN_DIR [options]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import ConfigError, RunConfig

STAGES = {
    "toy-gen": "generate toy train/val/test events in TrackML CSV layout",
    "ingest": "load events, filter volumes, select tracks",
    "build-vocab": "build the module vocabulary and tokenised pair datasets",
    "train-embed": "train CBOW token embeddings",
    "train": "train the transformer, keep the best-validation checkpoint",
    "decode": "greedy-decode the test pairs",
    "eval": "double-majority efficiency per length / pT bin",
    "plot": "SVG charts of the efficiency report",
}

EXIT_RUNTIME, EXIT_CONFIG, EXIT_MISSING_INPUT = 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                        help="override one config key (repeatable)")
    common.add_argument("--seed", type=int, help="master seed (same as --set seed=N)")
    common.add_argument("--out", metavar="DIR", default="run", help="run directory (default: ./run)")
    common.add_argument("--workers", type=int, default=1, help="worker processes for decode/eval")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tracksorter", description=__doc__)
    sub = parser.add_subparsers(dest="stage", required=True)
    for name, help_text in STAGES.items():
        sub.add_parser(name, parents=[common], help=help_text)
    sub.add_parser("show-config", help="print every config key with its default")
    return parser


def _error(stage: str, kind: str, message: str) -> None:
    print(f"error stage={stage} kind={kind} message={json.dumps(message)}", file=sys.stderr)


def run_stage(stage: str, cfg: RunConfig, run: pipeline.RunDir, workers: int) -> None:
    if stage == "toy-gen":
        pipeline.toy_gen(cfg, run)
    elif stage == "ingest":
        pipeline.ingest(cfg, run)
    elif stage == "build-vocab":
        pipeline.build_vocab(cfg, run)
    elif stage == "train-embed":
        pipeline.train_embed(cfg, run)
    elif stage == "train":
        ckpt = pipeline.train_model(cfg, run)
        logging.info("best epoch %d, val loss %.5f", ckpt.epoch, ckpt.val_loss)
    elif stage == "decode":
        pipeline.decode(cfg, run, workers)
    elif stage == "eval":
        table = pipeline.evaluate(cfg, run, workers)
        o = table.overall
        print(f"efficiency {o.efficiency:.4f} ({o.matched}/{o.total})")
    elif stage == "plot":
        pipeline.plot(cfg, run)
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(stage)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.stage == "show-config":
        sys.stdout.write(RunConfig.describe())
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        cfg = RunConfig.load(args.config, overrides)
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
    except ConfigError as exc:
        _error(args.stage, "config", str(exc))
        return EXIT_CONFIG
    try:
        run_stage(args.stage, cfg, pipeline.RunDir(args.out), args.workers)
    except pipeline.StageInputError as exc:
        _error(args.stage, "missing-input", str(exc))
        return EXIT_MISSING_INPUT
    except Exception as exc:  # noqa: BLE001 - reported as a single machine-readable line
        if args.verbose:
            logging.exception("stage failed")
        _error(args.stage, type(exc).__name__, str(exc))
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
