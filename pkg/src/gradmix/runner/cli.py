"""Command-line entry point: ``gradmix <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from ..data import CORRUPTION_TYPES, Split
from ..encoder import EncoderConfig
from .checkpoint import load_checkpoint
from .config import DataConfig, RunConfig, load_config
from .datasets import DATA_DIR_ENV, _load_files, data_dir, prepare_split
from .evaluate import SCORERS, eval_corruption, eval_detection, linear_probe
from .export import DEFAULT_THRESHOLDS, export_attribution
from .report import audit, format_table, merge_reports, read_report, to_json, write_report
from .train import TrainingError, model_from_checkpoint, train


# -- config flags -------------------------------------------------------------

def _config_fields():
    """(dotted name, default) for every scalar-or-list RunConfig field."""
    out = []
    for f in fields(RunConfig):
        if f.name == "encoder":
            out += [(f"encoder.{g.name}", getattr(EncoderConfig(), g.name)) for g in fields(EncoderConfig)]
        elif f.name == "data":
            out += [(f"data.{g.name}", getattr(DataConfig(), g.name)) for g in fields(DataConfig)]
        else:
            out.append((f.name, getattr(RunConfig(), f.name)))
    return out


def _parse_value(text: str, default):
    if isinstance(default, bool):
        if text.lower() not in ("true", "false", "1", "0"):
            raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")
        return text.lower() in ("true", "1")
    if isinstance(default, (list, tuple)):
        items = [s for s in text.split(",") if s]
        if default and isinstance(default[0], int):
            return [int(s) for s in items]
        return items
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    if default is None:
        return None if text.lower() == "none" else int(text)
    return text


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run configuration; explicit flags override its values")
    group = p.add_argument_group("configuration fields")
    for name, default in _config_fields():
        flag = "--" + name.replace("_", "-")
        group.add_argument(flag, dest=f"cfg:{name}", metavar="VALUE",
                           type=lambda s, d=default: _parse_value(s, d), default=argparse.SUPPRESS,
                           help=f"default {default!r}")


def config_from_args(args) -> RunConfig:
    base = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg:")}
    return (base.with_overrides(overrides) if overrides else base).validate()


# -- helpers --------------------------------------------------------------------

def _emit(report: dict, args) -> None:
    write_report(report, args.report, args.table)
    if not args.report:
        sys.stdout.write(to_json(report))
    elif not args.quiet:
        print(format_table(report))


def _add_output(p):
    p.add_argument("--report", help="write the JSON report here (default: stdout)")
    p.add_argument("--table", help="also write the aligned-table text report here")
    p.add_argument("--quiet", action="store_true", help="do not print the table")
    p.add_argument("--data-dir", help=f"directory for relative dataset paths (default ${DATA_DIR_ENV} or .)")


def _load_run(path, root):
    ckpt = load_checkpoint(path)
    config, encoder = model_from_checkpoint(ckpt)
    return config, encoder, prepare_split(config.data, root)


# -- commands -------------------------------------------------------------------

def cmd_train(args) -> int:
    config = config_from_args(args)
    resume = load_checkpoint(args.resume) if args.resume else None
    split = prepare_split(config.data, args.data_dir)
    start = time.perf_counter()
    result = train(config, split.train_known, resume=resume, stop_after=args.stop_after,
                   checkpoint_path=args.out)
    if args.log:
        with open(args.log, "w") as fh:
            for rec in result.log:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    report = {
        "kind": "train",
        "checkpoint": str(args.out),
        "epochs_completed": result.checkpoint.epoch,
        "epoch_losses": result.epoch_losses,
        "final_loss": result.epoch_losses[-1] if result.epoch_losses else None,
        "split": split.manifest,
        "config": config.to_dict(),
        "wall_clock_seconds": time.perf_counter() - start,
    }
    _emit(report, args)
    return 0


def cmd_eval_osr(args) -> int:
    runs = [_load_run(p, args.data_dir) for p in args.checkpoints]
    _emit(eval_detection(runs, args.scorer, args.k, task="osr"), args)
    return 0


def cmd_eval_ood(args) -> int:
    config, encoder, split = _load_run(args.checkpoint, args.data_dir)
    if args.ood_files:
        fmt = args.ood_format or config.data.source
        ood = _load_files(fmt, args.ood_files, data_dir(args.data_dir), args.ood_label_bytes)
        manifest = dict(split.manifest, unknown_source=[str(p) for p in args.ood_files])
        split = Split(split.train_known, split.test_known, ood, manifest)
    _emit(eval_detection([(config, encoder, split)], args.scorer, args.k, task="ood"), args)
    return 0


def cmd_eval_corrupt(args) -> int:
    config, encoder, split = _load_run(args.checkpoint, args.data_dir)
    report = eval_corruption(config, encoder, split.train_known, split.test_known,
                             types=args.types or CORRUPTION_TYPES, rule=args.rule, seed=args.seed)
    _emit(report, args)
    return 0


def cmd_probe(args) -> int:
    config, encoder, split = _load_run(args.checkpoint, args.data_dir)
    report = linear_probe(config, encoder, split.train_known, split.test_known, args.epochs, args.lr, args.seed)
    _emit(report, args)
    return 0


def cmd_export_maps(args) -> int:
    config, encoder, split = _load_run(args.checkpoint, args.data_dir)
    test = split.test_known
    idx = np.arange(min(args.count, len(test)))
    report = export_attribution(config, encoder, test.images[idx], test.labels[idx], args.out_dir,
                                layers=args.layers or None, thresholds=args.thresholds, seed=args.seed)
    _emit(report, args)
    return 0


def cmd_report(args) -> int:
    merged = merge_reports([read_report(p) for p in args.inputs])
    problems = audit(merged)
    write_report(merged, args.out, args.table)
    if not args.quiet:
        print(format_table(merged))
    if problems:
        raise ValueError("report audit failed: " + "; ".join(problems))
    return 0


# -- parser -----------------------------------------------------------------------

def _csv(kind):
    return lambda s: [kind(x) for x in s.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradmix", description="Open-set recognition experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an encoder and write a checkpoint")
    _add_config_flags(p)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--resume", help="continue from this checkpoint")
    p.add_argument("--stop-after", type=int, help="stop once this many epochs are complete")
    p.add_argument("--log", help="write per-batch loss records (JSON lines)")
    _add_output(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-osr", help="open-set detection over one checkpoint per trial")
    p.add_argument("checkpoints", nargs="+")
    p.add_argument("--scorer", choices=SCORERS, default="knn")
    p.add_argument("--k", type=int, help="kNN neighbours (default: the checkpoint's k)")
    _add_output(p)
    p.set_defaults(func=cmd_eval_osr)

    p = sub.add_parser("eval-ood", help="out-of-distribution detection against a second dataset")
    p.add_argument("checkpoint")
    p.add_argument("--ood-files", nargs="+", help="out-of-distribution dataset files "
                   "(default: the split's unknown classes)")
    p.add_argument("--ood-format", choices=("idx", "cifar-binary"))
    p.add_argument("--ood-label-bytes", type=int, default=1)
    p.add_argument("--scorer", choices=SCORERS, default="knn")
    p.add_argument("--k", type=int)
    _add_output(p)
    p.set_defaults(func=cmd_eval_ood)

    p = sub.add_parser("eval-corrupt", help="accuracy under synthetic corruptions")
    p.add_argument("checkpoint")
    p.add_argument("--types", type=_csv(str), help=f"comma-separated subset of {','.join(CORRUPTION_TYPES)}")
    p.add_argument("--rule", choices=("auto", "knn", "head"), default="auto")
    p.add_argument("--seed", type=int, default=0)
    _add_output(p)
    p.set_defaults(func=cmd_eval_corrupt)

    p = sub.add_parser("probe", help="linear probe on frozen features")
    p.add_argument("checkpoint")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--seed", type=int, default=0)
    _add_output(p)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("export-maps", help="write attribution maps for test images")
    p.add_argument("checkpoint")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--layers", type=_csv(str))
    p.add_argument("--thresholds", type=_csv(float), default=list(DEFAULT_THRESHOLDS))
    p.add_argument("--seed", type=int, default=0)
    _add_output(p)
    p.set_defaults(func=cmd_export_maps)

    p = sub.add_parser("report", help="merge JSON reports, audit them and render tables")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", help="merged JSON report")
    p.add_argument("--table", help="aligned-table text output")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure becomes a machine-readable record
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        if isinstance(exc, TrainingError):
            record["dump"] = exc.dump
        sys.stderr.write(json.dumps(record, sort_keys=True, default=str) + "\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
