"""Command-line entry point.

Subcommands: train a run from a config file, evaluate a checkpoint on a
dataset split, compare finished runs, inspect a checkpoint, and render
report figures from recorded runs.

Exit codes: 0 success, 1 bad configuration or usage, 2 training diverged,
3 file or data-format trouble.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint, read_header
from .data import IdxFormatError
from .harness import (DivergenceError, RunConfig, compare_runs, load_record,
                      parse_config_text, resolve_dataset, train_run,
                      write_compare_csv)
from .network import ConfigError, NonFiniteGradientError, evaluate
from .tracked import TrackedSet


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dropback")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a run from a key=value config file")
    p_train.add_argument("config", help="path to the config file")
    p_train.add_argument("--outdir", help="override the config's output directory")
    p_train.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                         help="override a single config key (repeatable)")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("dataset", help="mnist:<dir> or synth:<opts>")
    p_eval.add_argument("--split", default="val", choices=["train", "val", "test"])

    p_cmp = sub.add_parser("compare", help="tabulate finished runs side by side")
    p_cmp.add_argument("records", nargs="+", help="record.json paths")
    p_cmp.add_argument("--csv", help="also write the table to this CSV path")

    p_ins = sub.add_parser("inspect", help="print checkpoint layout and retention")
    p_ins.add_argument("checkpoint")

    p_rep = sub.add_parser("report", help="render figures from recorded run dirs")
    p_rep.add_argument("run_dirs", nargs="+", help="run output directories")
    p_rep.add_argument("--out", required=True, help="directory for figures and CSVs")
    return parser


def _cmd_train(args) -> int:
    text = Path(args.config).read_text()
    overrides = list(args.set)
    if args.outdir:
        overrides.append(f"outdir={args.outdir}")
    if overrides:
        text = text + "\n" + "\n".join(overrides)
    config = parse_config_text(text)
    record = train_run(config)
    print(f"run finished: {record['epochs_run']} epochs, "
          f"best val error {record['best_val_error']:.4f} "
          f"at epoch {record['best_epoch']}")
    print(f"record: {Path(config.outdir) / 'record.json'}")
    return 0


def _cmd_eval(args) -> int:
    state, header, spec = load_checkpoint(args.checkpoint)
    config = RunConfig(dataset=args.dataset, seed=header["seed"])
    splits = resolve_dataset(config)
    if args.split not in splits:
        raise ConfigError(f"dataset has no {args.split!r} split "
                          f"(has {sorted(splits)})")
    split = splits[args.split]
    err = evaluate(spec, state, split.features, split.labels)
    print(f"{args.split} error {err:.4f} on {len(split.labels)} samples "
          f"({header['kind']} checkpoint, step {header['step_index']})")
    return 0


def _cmd_compare(args) -> int:
    records = [load_record(p) for p in args.records]
    rows, text = compare_runs(records)
    print(text)
    if args.csv:
        write_compare_csv(args.csv, rows)
        print(f"wrote {args.csv}")
    return 0


def _cmd_inspect(args) -> int:
    header = read_header(args.checkpoint)
    dims = header["network_dims"]
    print(f"kind: {header['kind']}")
    print(f"network: {'-'.join(str(d) for d in dims)} (digest {header['network_digest']})")
    print(f"seed: {header['seed']}  step: {header['step_index']}")
    if header["kind"] == "dropback":
        print(f"capacity k: {header['capacity_k']}  "
              f"tracked: {header['entry_count']}  frozen: {header['frozen']}")
    elif header["kind"] == "magnitude":
        print(f"kept weights: {header['keep_count']} of {header['param_count']}")
    else:
        print(f"dense params: {header['param_count']}")
    if header.get("extra"):
        print(f"extra: {header['extra']}")
    state, _, spec = load_checkpoint(args.checkpoint)
    if isinstance(state, TrackedSet):
        per_tensor = state.layer_retention()
        tracked_total = max(len(state), 1)
        print(f"{'layer':<8} {'shape':<12} {'params':>8} {'tracked':>8} {'share':>7}")
        for i in range(len(dims) - 1):
            w, b = per_tensor[2 * i], per_tensor[2 * i + 1]
            size = spec.layout.sizes[2 * i] + spec.layout.sizes[2 * i + 1]
            shape = f"{dims[i]}x{dims[i + 1]}+{dims[i + 1]}"
            share = (w + b) / tracked_total
            print(f"fc{i + 1:<6} {shape:<12} {size:>8} {w + b:>8} {share:>6.1%}")
        print(f"{'total':<8} {'':<12} {spec.layout.total:>8} {len(state):>8}")
    return 0


def _cmd_report(args) -> int:
    from .report import render_report  # matplotlib import deferred until needed

    written = render_report(args.run_dirs, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors; remap
        return 0 if exc.code == 0 else 1
    handlers = {"train": _cmd_train, "eval": _cmd_eval, "compare": _cmd_compare,
                "inspect": _cmd_inspect, "report": _cmd_report}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DivergenceError, NonFiniteGradientError) as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 2
    except (IdxFormatError, CheckpointError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
