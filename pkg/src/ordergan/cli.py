"""``ordergan`` command line.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .autodiff import TrainingDiverged
from .config import ConfigError, RunConfig
from . import pipeline
from .pipeline import MODELS, UsageError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--out", help="output directory (default: $ORDERGAN_OUT or ./ordergan-out)")
    p.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    p.add_argument("--force", action="store_true", help="overwrite existing artifacts")
    p.add_argument("--paper-scale", action="store_true", help="128-dim embeddings and full-width networks")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ordergan", description="Synthetic e-commerce orders with conditional GANs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate the synthetic marketplace")
    _common(p)
    p = sub.add_parser("embed", help="train the customer encoder and embed orders")
    _common(p)

    p = sub.add_parser("train", help="train one model")
    _common(p)
    p.add_argument("--model", choices=MODELS, required=True)
    p.add_argument("--resume", action="store_true", help="continue from the saved checkpoint")
    p.add_argument("--steps", type=int, help="stop after this many generator steps")

    p = sub.add_parser("generate", help="sample orders from a trained model")
    _common(p)
    p.add_argument("--model", choices=MODELS, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--product", type=int, help="catalog product id")
    g.add_argument("--title", help="free-text product title")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--dest", help="output csv path")

    p = sub.add_parser("evaluate", help="compute every metric and write the report")
    _common(p)

    p = sub.add_parser("pipeline", help="synth, embed, train all models, evaluate")
    _common(p)

    p = sub.add_parser("selftest", help="run the built-in metric and gradient checks")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load_config(args) -> RunConfig:
    sets = list(args.set)
    if args.seed is not None:
        sets.append(f"seed={args.seed}")
    if args.paper_scale:
        sets.append("paper_scale=true")
    return RunConfig.load(args.config, sets)


def _run(args) -> int:
    if args.command == "selftest":
        from .selftest import run_selftest

        ok = True
        for name, passed, detail in run_selftest():
            print(f"{'PASS' if passed else 'FAIL'} {name}" + (f": {detail}" if detail else ""))
            ok &= passed
        return EXIT_OK if ok else EXIT_FAIL

    cfg = _load_config(args)
    out = cfg.output_dir(args.out)
    say = lambda msg: print(msg, flush=True)

    if args.command == "synth":
        for path in pipeline.synth(cfg, out, args.force):
            say(f"wrote {path}")
    elif args.command == "embed":
        e = pipeline.embed(cfg, out, args.force)
        say(f"embedded {len(e.train)} training and {len(e.eval)} eval orders into {e.layout.dim} dims under {out / 'embed'}")
    elif args.command == "train":
        if args.steps is not None and args.steps < 0:
            raise UsageError("--steps must be >= 0")

        def progress(row):
            acc = row["tracker_accuracy"]
            extra = f" tracker {acc:.3f}" if acc is not None else ""
            say(f"step {row['step']} critic {row['critic_loss']:.4f} gen {row['gen_loss']:.4f}{extra}")

        m = pipeline.train_model(cfg, out, args.model, args.force, args.resume, args.steps, progress if args.verbose else None)
        say(f"saved {pipeline.model_path(out, args.model)} after {m.step} steps")
    elif args.command == "generate":
        dest = pipeline.generate(cfg, out, args.model, args.n, args.product, args.title, Path(args.dest) if args.dest else None, args.force)
        say(f"wrote {dest}")
    elif args.command == "evaluate":
        result = pipeline.evaluate(cfg, out, args.force, say if args.verbose else None)
        for k, v in sorted(result["metrics"].items()):
            say(f"{k} = {v:.4f}" if isinstance(v, float) else f"{k} = {v}")
        say(f"report under {out / 'report'}")
    elif args.command == "pipeline":
        pipeline.synth(cfg, out, args.force)
        say("synth done")
        pipeline.embed(cfg, out, args.force)
        say("embed done")
        for model in MODELS:
            pipeline.train_model(cfg, out, model, args.force)
            say(f"{model} trained")
        pipeline.evaluate(cfg, out, args.force, say if args.verbose else None)
        say(f"report under {out / 'report'}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except (UsageError, ConfigError) as e:
        print(f"ordergan: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as e:
        print(f"ordergan: training diverged: {e}", file=sys.stderr)
        return EXIT_FAIL
    except KeyboardInterrupt:
        print("ordergan: interrupted", file=sys.stderr)
        return EXIT_FAIL
    except Exception as e:
        if args.verbose:
            raise
        print(f"ordergan: failed: {type(e).__name__}: {e} (rerun with -v for a traceback)", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
