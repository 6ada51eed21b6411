"""``fgocr``: batch command-line frontend.

Exit codes: 0 success, 1 usage error, 2 data or contract error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__, nn
from .commands import (
    ContractError,
    cmd_augment,
    cmd_evaluate,
    cmd_finetune,
    cmd_generate,
    cmd_ocr,
    cmd_split,
    cmd_train,
    cmd_train_classifier,
    workspace,
)
from .config import ENV_CONFIG, ConfigError, RunConfig
from .data import SplitError
from .models import RegistryError
from .train import TrainingError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
DATA_ERRORS = (ContractError, FileNotFoundError, RegistryError, SplitError, TrainingError, nn.CheckpointError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help=f"INI run config (default: ${ENV_CONFIG} if set)")
    p.add_argument("--workdir", type=Path, help="run directory (overrides [run] workdir)")
    p.add_argument("--seed", type=int, help="overrides [run] seed")
    p.add_argument("--jobs", type=int, help="worker threads for generation, augmentation and inference")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="config override")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fgocr", description="Font-group aware OCR: data, training, inference, evaluation.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("generate", help="render the synthetic multi-group corpus")
    _common(p)
    p = sub.add_parser("split", help="book-level train/validation/test split")
    _common(p)
    p = sub.add_parser("augment", help="offline augmentation of the training books")
    _common(p)
    p = sub.add_parser("train", help="train the baseline recognizer")
    _common(p)
    p = sub.add_parser("finetune", help="fine-tune the baseline on a font group (or gothic/roman)")
    _common(p)
    p.add_argument("target", nargs="+", help="font group name, 'gothic' or 'roman'; 'all' for every configured group")
    p = sub.add_parser("train-classifier", help="train the COCR step classifier, the column classifier, or the joint COCR")
    _common(p)
    p.add_argument("--kind", choices=("cocr", "column", "joint"), default="cocr")
    p = sub.add_parser("ocr", help="transcribe lines with one system")
    _common(p)
    p.add_argument("--system", help="baseline | font:<group> | gothic | roman | selocr | splitocr | cocr | cocr-joint | selocr-oracle")
    p.add_argument("--input", type=Path, help="dataset directory or single line image (default: the run's test books)")
    p.add_argument("--split", dest="part", default="test", choices=("train", "validation", "test"))
    p.add_argument("--registry", type=Path, help="registry manifest (default: <workdir>/models/registry.ini)")
    p.add_argument("--theta", type=float, help="COCR gate threshold")
    p.add_argument("--output", type=Path, help="TSV output path")
    p = sub.add_parser("evaluate", help="CER tables and length bins for transcripts")
    _common(p)
    p.add_argument("--hypotheses", action="append", required=True, metavar="[NAME=]TSV")
    p.add_argument("--dataset", type=Path, help="labelled dataset (default: the run's split)")
    p.add_argument("--split", dest="part", default="test", choices=("train", "validation", "test"))
    p.add_argument("--output", type=Path, help="report path prefix (default: <workdir>/reports/<split>)")
    p = sub.add_parser("desk", help="run the whole desk-scale pipeline")
    _common(p)
    return parser


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config)
    for item in args.set:
        cfg.override(item)
    if args.seed is not None:
        cfg.set("run", "seed", args.seed)
    if args.jobs is not None:
        cfg.set("run", "jobs", args.jobs)
    if args.workdir is not None:
        cfg.set("run", "workdir", str(args.workdir))
    if getattr(args, "system", None):
        cfg.set("ocr", "system", args.system)
    if getattr(args, "theta", None) is not None:
        cfg.set("ocr", "theta", args.theta)
    return cfg


def _hypotheses(items):
    out = []
    for item in items:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        out.append((name, Path(path)))
    return out


def dispatch(args) -> None:
    cfg = load_config(args)
    ws = workspace(cfg)
    cmd, force = args.command, args.force
    if cmd == "generate":
        totals = cmd_generate(cfg, ws, force)
        print("characters per group: " + ", ".join(f"{g} {n}" for g, n in totals.items()))
    elif cmd == "split":
        split = cmd_split(cfg, ws, force)
        for part in ("train", "validation", "test"):
            print(f"{part}: {len(split.books(part))} books {split.char_counts.get(part, {})}")
    elif cmd == "augment":
        print(f"{cmd_augment(cfg, ws, force)} training lines")
    elif cmd == "train":
        print(cmd_train(cfg, ws, force))
    elif cmd == "finetune":
        targets = [g.label for g in cfg.groups] if [t.lower() for t in args.target] == ["all"] else args.target
        for t in targets:
            print(cmd_finetune(cfg, ws, t, force))
    elif cmd == "train-classifier":
        print(cmd_train_classifier(cfg, ws, args.kind, force))
    elif cmd == "ocr":
        print(cmd_ocr(cfg, ws, input_path=args.input, part=args.part, registry_path=args.registry, out=args.output, force=force))
    elif cmd == "evaluate":
        result = cmd_evaluate(cfg, ws, _hypotheses(args.hypotheses), args.dataset, args.part, args.output, force)
        sys.stdout.write(result.table())
    elif cmd == "desk":
        from .desk import run_desk

        result = run_desk(cfg, ws, force=force)
        sys.stdout.write(result.summary())


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("fgocr: a command is required (see --help)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
        dispatch(args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
