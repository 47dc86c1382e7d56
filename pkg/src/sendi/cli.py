"""``sendi`` command line.

Exit codes: 0 success, 2 usage error (including refusing to overwrite
outputs), 3 configuration error, 4 data error (missing or stale artifacts),
5 numerical failure, 6 forecast or training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .config import ConfigError, resolve
from .dynamics import DivergenceError
from .nn import CheckpointError, ConfigurationError, NumericError
from .store import StalenessError
from .training import TrainingAborted

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DATA = 4
EXIT_NUMERIC = 5
EXIT_DIVERGENCE = 6

log = logging.getLogger("sendi")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment configuration JSON")
    p.add_argument("--preset", action="append", default=[],
                   help="built-in preset (app1, app2, app3, desk); repeatable, merged in order")
    p.add_argument("--seed", type=int, help="override the global seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--dry-run", action="store_true", help="print the resolved plan and stop")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sendi", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sendi {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate trajectories and write labelled windows")
    _common(p)
    p = sub.add_parser("train", help="train every model the configuration describes")
    _common(p)
    p.add_argument("--resume", action="store_true", help="continue interrupted runs")
    p = sub.add_parser("evaluate", help="forecast / score the trained models on test data")
    _common(p)
    p = sub.add_parser("report", help="render figures and tables from an evaluation")
    _common(p)
    p = sub.add_parser("identify", help="predict parameters for one window CSV")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--window", type=Path, required=True, help="CSV whose header names the features")
    p.add_argument("--runs", type=int, default=100, help="warm timing repetitions")
    p.add_argument("--out", type=Path, help="write the JSON here instead of stdout")
    p.add_argument("--force", action="store_true")
    return parser


def _emit(payload: dict, out: Path | None = None, force: bool = False) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=str)
    if out is None:
        print(text)
        return
    if out.exists() and not force:
        raise pipeline.OutputExistsError(f"{out} already exists; pass --force to overwrite")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text + "\n")


def run(args: argparse.Namespace) -> int:
    if args.command == "identify":
        result = pipeline.identify(args.checkpoint, args.window, args.runs)
        _emit(result, args.out, args.force)
        return EXIT_OK
    config = resolve(args.config, args.preset, args.seed, args.out)
    if args.command == "generate":
        result = pipeline.generate(config, args.force, args.dry_run)
    elif args.command == "train":
        result = pipeline.train_all(config, args.force, args.resume, args.dry_run)
    elif args.command == "evaluate":
        result = pipeline.evaluate(config, args.force, args.dry_run)
    else:
        result = pipeline.report(config, args.force, args.dry_run)
    if args.dry_run:
        _emit({"config": config, "plan": result})
    else:
        summary = {k: v for k, v in result.items() if k != "files"}
        summary["files_written"] = len(result.get("files", {}))
        _emit(summary)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (pipeline.UsageError, pipeline.OutputExistsError) as exc:
        print(f"sendi: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"sendi: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, TrainingAborted) as exc:
        print(f"sendi: divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ConfigurationError as exc:
        print(f"sendi: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StalenessError, CheckpointError, FileNotFoundError) as exc:
        print(f"sendi: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError, ArithmeticError) as exc:
        print(f"sendi: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
