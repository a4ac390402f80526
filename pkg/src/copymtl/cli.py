"""Command line front end.

Subcommands: ``synth``, ``train``, ``eval``, ``decode``, ``diagnose``.  Exit
status is 0 on success, 1 for usage errors, 2 for unreadable or malformed
data and checkpoints, 3 when training hits a non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import typing
from dataclasses import MISSING, fields
from pathlib import Path

from .checkpoint import CheckpointError
from .data import DataError, SynthConfig, parse_dataset, synth_generate, write_jsonl
from .extraction import RELAXED, STRICT
from .numerics import NumericError
from .training import TrainConfig, diagnose, evaluate, load_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("copymtl")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_dataclass_flags(parser: argparse.ArgumentParser, cls, skip=()) -> None:
    """One flag per field, spelled with underscores or dashes; defaults come from the class."""
    hints = typing.get_type_hints(cls)
    for f in fields(cls):
        if f.name in skip:
            continue
        kind = hints[f.name]
        names = [f"--{f.name}"] + ([f"--{f.name.replace('_', '-')}"] if "_" in f.name else [])
        default = None if f.default is MISSING else f.default
        if kind is bool:
            parser.add_argument(*names, dest=f.name, action=argparse.BooleanOptionalAction, default=default)
            continue
        base = next((t for t in typing.get_args(kind) if t is not type(None)), kind)
        parser.add_argument(*names, dest=f.name, type=base, default=None,
                            help=f"default: {default}")


def _collect(args: argparse.Namespace, cls, skip=()) -> dict:
    return {f.name: getattr(args, f.name) for f in fields(cls)
            if f.name not in skip and getattr(args, f.name) is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="copymtl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic train/test corpus as JSONL")
    p.add_argument("--out", required=True, type=Path, help="directory for train.jsonl and test.jsonl")
    _add_dataclass_flags(p, SynthConfig)

    p = sub.add_parser("train", help="train a model and write checkpoints plus metrics.csv")
    p.add_argument("--train", dest="train_path", required=True, type=Path)
    p.add_argument("--test", dest="test_path", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--embeddings", type=Path, help="pretrained word vectors, one token per line")
    _add_dataclass_flags(p, TrainConfig)

    for name, text in (("eval", "score a checkpoint on a corpus; prints an EvalReport as JSON"),
                       ("decode", "print extracted triplets for every sentence as JSONL"),
                       ("diagnose", "copy-scorer health report as JSON")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--checkpoint", required=True, type=Path)
        p.add_argument("--data", required=True, type=Path)
        if name != "diagnose":
            p.add_argument("--use_mask", "--use-mask", dest="use_mask", action=argparse.BooleanOptionalAction,
                           default=None, help="default: the checkpoint's training setting")
            p.add_argument("--post_process", "--post-process", dest="post_process",
                           action=argparse.BooleanOptionalAction, default=True)
        if name == "eval":
            p.add_argument("--mode", choices=[STRICT, RELAXED], default=STRICT)
        if name == "diagnose":
            p.add_argument("--trials", type=int, default=100)
            p.add_argument("--seed", type=int, default=0)
    return parser


def _synth(args) -> None:
    try:
        cfg = SynthConfig(**_collect(args, SynthConfig))
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    train_set, test_set = synth_generate(cfg)
    args.out.mkdir(parents=True, exist_ok=True)
    write_jsonl(train_set, args.out / "train.jsonl")
    write_jsonl(test_set, args.out / "test.jsonl")
    print(json.dumps({"train": len(train_set), "test": len(test_set), "out": str(args.out)}))


def _train(args) -> None:
    overrides = _collect(args, TrainConfig, skip=("preset",))
    try:
        cfg = TrainConfig.preset_config(args.preset or "desk", **overrides)
        cfg.model_config(1, 1).decoder_config()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    train_set = parse_dataset(args.train_path)
    test_set = parse_dataset(args.test_path) if args.test_path else []
    result = train(cfg, train_set, test_set, out_dir=args.out, embeddings=args.embeddings)
    sys.stdout.write(result.metrics_csv())
    if test_set and result.rows:
        best = result.best("test")
        epoch = best["epoch"]
        # selected on the test split itself, so this is not an unbiased estimate
        print(f"best test F1 {best['f1']:.4f} at epoch {epoch} (selected on the test split; "
              f"checkpoint {args.out / f'epoch_{epoch:03d}.json'})", file=sys.stderr)


def _eval(args) -> None:
    report = evaluate(args.checkpoint, parse_dataset(args.data), args.mode, args.use_mask, args.post_process)
    print(report.to_json())


def _decode(args) -> None:
    extractor = load_checkpoint(args.checkpoint)
    instances = parse_dataset(args.data)
    for inst, (_, _, triplets) in zip(instances, extractor.predict(instances, args.use_mask, args.post_process)):
        rows = [{"relation": t.relation, "head": list(t.head), "tail": list(t.tail)} for t in sorted(triplets)]
        print(json.dumps({"tokens": inst.tokens, "triplets": rows}, ensure_ascii=False))


def _diagnose(args) -> None:
    print(json.dumps(diagnose(args.checkpoint, parse_dataset(args.data), args.trials, args.seed), sort_keys=True))


COMMANDS = {"synth": _synth, "train": _train, "eval": _eval, "decode": _decode, "diagnose": _diagnose}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"copymtl: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, OSError, ValueError, KeyError) as exc:
        print(f"copymtl: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
