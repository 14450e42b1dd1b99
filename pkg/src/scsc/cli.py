"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/input error, 3 numerical or
convergence failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, NumericalError
from .online import TRACE_COLUMNS
from .pipeline.experiment import (build_model, compare_bundles,
                                  memory_rows, run_experiment, summarize, train_model,
                                  write_csv)
from .pipeline.preprocess import LcnConfig, PreprocessConfig, TaperConfig, load_dataset
from .pipeline.tasks import TaskSpec, run_task
from .persistence import load_model, metadata, save_model

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _preprocess_options(p):
    p.add_argument("--raw", action="store_true",
                   help="use signals as stored (skip grayscale/standardize/LCN/taper)")
    p.add_argument("--lcn-kernel", type=int, default=9)
    p.add_argument("--lcn-epsilon", type=float, default=1e-4)
    p.add_argument("--no-lcn", action="store_true")
    p.add_argument("--taper-margin", type=int, default=8)
    p.add_argument("--no-taper", action="store_true")


def _preprocess_config(args):
    if args.raw:
        return PreprocessConfig(grayscale=False, standardize=False, lcn=None, taper=None)
    return PreprocessConfig(
        lcn=None if args.no_lcn else LcnConfig(args.lcn_kernel, args.lcn_epsilon),
        taper=None if args.no_taper else TaperConfig(args.taper_margin))


def _load(args):
    signals, manifest = load_dataset(args.data, _preprocess_config(args))
    for m in manifest:
        if not m.ok:
            print(f"warning: skipped {m.filename}: {m.error}", file=sys.stderr)
    return signals, manifest


def build_parser():
    parser = _Parser(prog="scsc", description="Online convolutional sparse coding "
                     "with sample-dependent dictionaries.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("preprocess", help="preprocess a directory into .npy signals")
    p.add_argument("data")
    p.add_argument("out")
    _preprocess_options(p)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("data")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--algo", choices=("scsc", "ocsc"), default="scsc")
    p.add_argument("--R", type=int, default=3)
    p.add_argument("--K", type=int, default=12)
    p.add_argument("--tag", choices=("l1", "l2"), default="l2")
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shuffle-seed", type=int, default=0)
    p.add_argument("--filter-size", type=int, nargs="+", default=[8],
                   help="filter extents (one value is used for every axis)")
    p.add_argument("--trace", help="write the per-step trace CSV here")
    _preprocess_options(p)

    for name, help_ in (("infer", "reconstruct signals with a trained model"),
                        ("denoise", "add seeded Gaussian noise and restore"),
                        ("inpaint", "drop a seeded fraction of pixels and restore"),
                        ("eval", "per-signal PSNR table for a task")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("model")
        p.add_argument("data")
        p.add_argument("--out", help="directory for reconstructions (.npy)")
        p.add_argument("--metrics", help="write per-signal PSNR CSV here")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--seed", type=int, default=0)
        if name in ("denoise", "eval"):
            p.add_argument("--variance", type=float, default=0.01 if name == "denoise" else None)
        if name in ("inpaint", "eval"):
            p.add_argument("--fraction", type=float, default=0.5 if name == "inpaint" else None)
        if name == "eval":
            p.add_argument("--task", choices=("reconstruct", "denoise", "inpaint"),
                           default="reconstruct")
        _preprocess_options(p)

    p = sub.add_parser("compare", help="delta table between two result bundles")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--out", help="write the delta CSV here")

    p = sub.add_parser("inspect-model", help="print model metadata")
    p.add_argument("model")

    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--output-dir")
    return parser


def cmd_preprocess(args):
    signals, manifest = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ok = [m for m in manifest if m.ok]
    for m, x in zip(ok, signals):
        np.save(out / (Path(m.filename).stem + ".npy"), x)
    (out / "manifest.json").write_text(json.dumps(
        {"preprocess": _preprocess_config(args).to_dict(),
         "files": [m.to_dict() for m in manifest]}, indent=2) + "\n")
    print(f"wrote {len(signals)} signals to {out}")


def cmd_train(args):
    signals, _ = _load(args)
    shape = signals[0].shape
    extents = args.filter_size * len(shape) if len(args.filter_size) == 1 else args.filter_size
    if len(extents) != len(shape):
        raise UsageError(f"--filter-size needs 1 or {len(shape)} values")
    mcfg = {"algo": args.algo, "R": args.R, "K": args.K, "tag": args.tag, "beta": args.beta,
            "seed": args.seed, "filterExtents": extents}
    model = build_model(mcfg, shape)
    model, trace, series = train_model(model, signals, args.epochs, args.shuffle_seed)
    save_model(model, args.out)
    if args.trace:
        write_csv(args.trace, trace, TRACE_COLUMNS)
    for row in series:
        print(f"epoch {row['epoch']}: train PSNR {row['trainPsnr']:.2f} dB "
              f"({row['seconds']:.1f} s)")
    print(f"saved {args.out}")


def _task(args):
    kind = args.command if args.command in ("denoise", "inpaint") else getattr(args, "task",
                                                                              "reconstruct")
    kind = "reconstruct" if kind == "infer" else kind
    try:
        return TaskSpec(kind, getattr(args, "variance", None) if kind == "denoise" else None,
                        getattr(args, "fraction", None) if kind == "inpaint" else None,
                        args.seed)
    except InvalidInputError as err:
        raise UsageError(str(err)) from err


def cmd_task(args):
    task = _task(args)
    model = load_model(args.model)
    signals, manifest = _load(args)
    rows = run_task(model, signals, task, workers=args.workers)
    names = [m.filename for m in manifest if m.ok]
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, r in zip(names, rows):
            np.save(out / (Path(name).stem + ".npy"), r["reconstruction"])
    metric_rows = [{"task": task.kind, "index": r["index"], "file": name,
                    "inputPsnr": r["inputPsnr"], "outputPsnr": r["outputPsnr"]}
                   for name, r in zip(names, rows)]
    if args.metrics:
        write_csv(args.metrics, metric_rows, ("task", "index", "file", "inputPsnr", "outputPsnr"))
    for r in metric_rows:
        print(f"{r['file']}: input {r['inputPsnr']:.2f} dB, output {r['outputPsnr']:.2f} dB")
    s = summarize(metric_rows)[0]
    print(f"mean: input {s['meanInputPsnr']:.2f} dB, output {s['meanOutputPsnr']:.2f} dB")


def cmd_compare(args):
    rows = compare_bundles(args.a, args.b)
    if args.out:
        write_csv(args.out, rows, ("task", "psnrA", "psnrB", "delta"))
    print(f"{'task':<12}{'A':>10}{'B':>10}{'delta':>10}")
    for r in rows:
        print(f"{r['task']:<12}{r['psnrA']:>10.2f}{r['psnrB']:>10.2f}{r['delta']:>10.2f}")


def cmd_inspect(args):
    model = load_model(args.model)
    meta = metadata(model)
    bank = getattr(model, "bank", None) or model.dictionary
    meta["filterNorms"] = [round(float(v), 12) for v in bank.norms()]
    meta["feasible"] = bank.is_feasible()
    P = int(np.prod(bank.support.padded))
    meta["memory"] = memory_rows(P, meta["R"], meta["K"])[0]
    print(json.dumps(meta, indent=2, sort_keys=True))


def cmd_run(args):
    bundle = run_experiment(args.config, output_dir=args.output_dir)
    print(f"results in {bundle}")
    with open(bundle / "metrics_summary.csv") as fh:
        print(fh.read().rstrip())


COMMANDS = {"preprocess": cmd_preprocess, "train": cmd_train, "infer": cmd_task,
            "denoise": cmd_task, "inpaint": cmd_task, "eval": cmd_task,
            "compare": cmd_compare, "inspect-model": cmd_inspect, "run": cmd_run}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        COMMANDS[args.command](args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except InvalidInputError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
