"""Config-driven experiments: train or load a model, run tasks, write a results bundle.

Bundle layout under ``<outputDir>/<runId>/``::

    model.bin, model.bin.json   trained model and its metadata
    manifest.json               resolved config, dataset manifests, library versions
    metrics.csv                 per-image PSNR rows
    metrics_summary.csv         mean PSNR per task
    trace.csv                   one row per training step
    memory.csv                  measured statistics bytes next to the theoretical ratio
    series/*.csv                plot-ready series

Everything except the wall-clock columns (``trace.csv:millis`` and
``series/psnr_vs_time.csv:seconds``) is a deterministic function of the
config and its seeds.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import time
from pathlib import Path

import jsonschema
import numpy as np
import scipy
import yaml

from ..core import compression_ratio, mean_psnr
from ..errors import InvalidInputError
from ..fftops import FilterSupport
from ..ocsc import init_ocsc, ocsc_memory_footprint, ocsc_train
from ..online import TRACE_COLUMNS, init_model, memory_footprint, train
from ..persistence import load_model, save_model
from ..solvers import AdmmConfig, NiApgConfig
from .preprocess import PreprocessConfig, load_dataset
from .synthetic import generate
from .tasks import TaskSpec, run_task

SCHEMA_VERSION = 1

METRIC_COLUMNS = ("task", "index", "inputPsnr", "outputPsnr")
SUMMARY_COLUMNS = ("task", "count", "meanInputPsnr", "meanOutputPsnr", "gain")
MEMORY_COLUMNS = ("P", "R", "K", "scscSecondMomentBytes", "ocscSecondMomentBytes",
                  "scscStatsBytes", "ocscStatsBytes", "measuredRatio", "theoreticalCR")

_number = {"type": "number"}
_count = {"type": "integer", "minimum": 1}
_extents = {"type": "array", "items": _count, "minItems": 1}

_dataset = {
    "type": "object",
    "oneOf": [{"required": ["path"]}, {"required": ["synthetic"]}],
    "properties": {
        "path": {"type": "string"},
        "shape": _extents,
        "preprocess": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "grayscale": {"type": "boolean"},
                "standardize": {"type": "boolean"},
                "lcn": {"type": ["object", "null"], "additionalProperties": False,
                        "properties": {"kernel_size": _count, "epsilon": _number}},
                "taper": {"type": ["object", "null"], "additionalProperties": False,
                          "properties": {"margin": {"type": "integer", "minimum": 0},
                                         "window": {"enum": ["cosine"]}}},
            },
        },
        "synthetic": {
            "type": "object",
            "additionalProperties": False,
            "required": ["shape", "filterExtents", "R", "K", "samples"],
            "properties": {
                "shape": _extents, "filterExtents": _extents, "R": _count, "K": _count,
                "samples": _count, "density": _number, "amplitude": _number,
                "smooth": {"type": "boolean"}, "seed": {"type": "integer"},
                "start": {"type": "integer", "minimum": 0},
            },
        },
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["version", "runId", "data", "model"],
    "additionalProperties": False,
    "properties": {
        "version": {"const": SCHEMA_VERSION},
        "runId": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "outputDir": {"type": "string"},
        "workers": _count,
        "data": {
            "type": "object",
            "additionalProperties": False,
            "required": ["train"],
            "properties": {"train": _dataset, "test": _dataset},
        },
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "load": {"type": "string"},
                "algo": {"enum": ["scsc", "ocsc"]},
                "R": _count, "K": _count,
                "tag": {"enum": ["l1", "l2"]},
                "beta": {"type": "number", "exclusiveMinimum": 0},
                "filterExtents": _extents,
                "epochs": {"type": "integer", "minimum": 0},
                "seed": {"type": "integer"},
                "shuffleSeed": {"type": "integer"},
                "cacheWarmStarts": {"type": "boolean"},
                "sharedWeights": {"type": "boolean"},
                "admm": {"type": "object"},
                "niapg": {"type": "object"},
                "code": {"type": "object"},
            },
        },
        "tasks": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["kind"],
                "properties": {
                    "kind": {"enum": ["reconstruct", "denoise", "inpaint"]},
                    "noiseVariance": {"type": "number", "minimum": 0},
                    "maskFraction": {"type": "number", "minimum": 0, "maximum": 1},
                    "seed": {"type": "integer"},
                },
            },
        },
    },
}

DEFAULT_MODEL = {"algo": "scsc", "R": 3, "K": 12, "tag": "l2", "beta": 0.05,
                 "filterExtents": [8, 8], "epochs": 5, "seed": 0, "shuffleSeed": 0}


class ConfigError(InvalidInputError):
    pass


def validate_config(config):
    """Raise :class:`ConfigError` naming the offending key, e.g. ``model.R``."""
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    error = jsonschema.exceptions.best_match(validator.iter_errors(config))
    if error is not None:
        where = ".".join(str(p) for p in error.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {error.message}")
    return config


def load_config(path):
    try:
        with open(path) as fh:
            config = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    except yaml.YAMLError as err:
        raise ConfigError(f"{path}: malformed YAML ({err})") from err
    return validate_config(config if config is not None else {})


def _section(name, cls, values):
    try:
        return cls(**(values or {}))
    except TypeError as err:
        raise ConfigError(f"config error at model.{name}: {err}") from err


def _load_data(spec, base):
    if spec is None:
        return [], []
    if "synthetic" in spec:
        s = spec["synthetic"]
        start = s.get("start", 0)
        syn = generate(tuple(s["shape"]), tuple(s["filterExtents"]), s["R"], s["K"],
                       start + s["samples"], density=s.get("density", 0.003),
                       amplitude=s.get("amplitude", 3.0), seed=s.get("seed", 0),
                       smooth=s.get("smooth", True))
        return syn.signals[start:], [{"filename": f"synthetic[{i}]", "shape": list(s["shape"]),
                                      "sha256": "", "ok": True, "error": ""}
                                     for i in range(start, start + s["samples"])]
    path = Path(spec["path"])
    if not path.is_absolute():
        path = base / path
    signals, manifest = load_dataset(path, PreprocessConfig.from_dict(spec.get("preprocess")),
                                     shape=spec.get("shape"))
    return signals, [m.to_dict() for m in manifest]


def build_model(mcfg, shape):
    support = FilterSupport(tuple(mcfg["filterExtents"]), tuple(shape))
    admm = _section("admm", AdmmConfig, mcfg.get("admm"))
    if mcfg["algo"] == "ocsc":
        options = {"admm": admm}
        if "code" in mcfg:
            options["code"] = _section("code", AdmmConfig, mcfg["code"])
        return init_ocsc(support, mcfg["K"], seed=mcfg["seed"], beta=mcfg["beta"], **options)
    return init_model(support, mcfg["R"], mcfg["K"], constraint=mcfg["tag"], seed=mcfg["seed"],
                      beta=mcfg["beta"], admm=admm,
                      niapg=_section("niapg", NiApgConfig, mcfg.get("niapg")),
                      cache_warm_starts=mcfg.get("cacheWarmStarts", True),
                      shared_weights=mcfg.get("sharedWeights", False))


def train_model(model, signals, epochs, shuffle_seed):
    """Train and collect trace rows plus the per-epoch PSNR-vs-time series."""
    start = time.perf_counter()
    series = []

    def on_epoch(epoch, _model, reports):
        series.append({"epoch": epoch, "seconds": time.perf_counter() - start,
                       "trainPsnr": mean_psnr([r.psnr for r in reports])})

    runner = ocsc_train if hasattr(model, "dictionary") else train
    model, reports = runner(model, signals, epochs=epochs, shuffle_seed=shuffle_seed,
                            callback=on_epoch) if epochs > 0 else (model, [])
    return model, [r.trace_row() for r in reports], series


def memory_rows(P, R, K):
    """Measured statistics bytes of SCSC(R) and OCSC(K) models on ``P`` frequencies."""
    support = FilterSupport((1,), (P,))
    scsc = memory_footprint(init_model(support, R, K, allow_r_gt_k=True))
    ocsc = ocsc_memory_footprint(init_ocsc(support, K))
    return [{"P": P, "R": R, "K": K,
             "scscSecondMomentBytes": scsc.second_moment,
             "ocscSecondMomentBytes": ocsc.second_moment,
             "scscStatsBytes": scsc.stats, "ocscStatsBytes": ocsc.stats,
             "measuredRatio": ocsc.second_moment / scsc.second_moment,
             "theoreticalCR": compression_ratio(K, R)}]


def _fmt(v):
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else str(v)
    return v


def write_csv(path, rows, columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore",
                                lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in columns})


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def task_spec(t):
    return TaskSpec(t["kind"], t.get("noiseVariance"), t.get("maskFraction"), t.get("seed", 0))


def summarize(metric_rows):
    out = []
    for task in dict.fromkeys(r["task"] for r in metric_rows):
        rows = [r for r in metric_rows if r["task"] == task]
        inp = mean_psnr([r["inputPsnr"] for r in rows])
        outp = mean_psnr([r["outputPsnr"] for r in rows])
        out.append({"task": task, "count": len(rows), "meanInputPsnr": inp,
                    "meanOutputPsnr": outp, "gain": outp - inp})
    return out


def run_experiment(config, base_dir=".", output_dir=None):
    """Run a validated config (a dict, or a path to a YAML file).

    Returns the bundle directory.
    """
    if isinstance(config, (str, Path)):
        base_dir = Path(config).resolve().parent
        config = load_config(config)
    else:
        config = validate_config(copy.deepcopy(config))
    base_dir = Path(base_dir)
    mcfg = {**DEFAULT_MODEL, **config["model"]}
    out = Path(output_dir or config.get("outputDir", "results"))
    if not out.is_absolute():
        out = base_dir / out
    bundle = out / config["runId"]
    bundle.mkdir(parents=True, exist_ok=True)

    train_signals, train_manifest = _load_data(config["data"]["train"], base_dir)
    test_signals, test_manifest = _load_data(config["data"].get("test"), base_dir)
    if "load" in mcfg:
        model = load_model(base_dir / mcfg["load"])
        trace, time_series = [], []
    else:
        model = build_model(mcfg, train_signals[0].shape)
        model, trace, time_series = train_model(model, train_signals, mcfg["epochs"],
                                                mcfg["shuffleSeed"])
    save_model(model, bundle / "model.bin")

    eval_signals = test_signals or train_signals
    metric_rows = []
    for t in config.get("tasks", [{"kind": "reconstruct"}]):
        spec = task_spec(t)
        for r in run_task(model, eval_signals, spec, workers=config.get("workers", 1)):
            metric_rows.append({"task": spec.kind, "index": r["index"],
                                "inputPsnr": r["inputPsnr"], "outputPsnr": r["outputPsnr"]})

    write_csv(bundle / "metrics.csv", metric_rows, METRIC_COLUMNS)
    write_csv(bundle / "metrics_summary.csv", summarize(metric_rows), SUMMARY_COLUMNS)
    write_csv(bundle / "trace.csv", trace, TRACE_COLUMNS)
    write_csv(bundle / "series" / "psnr_vs_time.csv", time_series, ("epoch", "seconds", "trainPsnr"))
    write_csv(bundle / "series" / "objective_vs_step.csv", trace, ("t", "subObj", "dictObj"))
    write_csv(bundle / "series" / "psnr_vs_epoch.csv", time_series, ("epoch", "trainPsnr"))
    write_csv(bundle / "memory.csv",
              memory_rows(int(np.prod(train_signals[0].shape)), mcfg["R"], mcfg["K"]),
              MEMORY_COLUMNS)
    manifest = {"runId": config["runId"], "schemaVersion": SCHEMA_VERSION, "config": config,
                "model": mcfg, "trainData": train_manifest, "testData": test_manifest,
                "versions": {"numpy": np.__version__, "scipy": scipy.__version__}}
    (bundle / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return bundle


def compare_bundles(a, b):
    """Join two bundles' summaries on task: rows with both PSNRs and their difference."""
    rows_a = {r["task"]: r for r in read_csv(Path(a) / "metrics_summary.csv")}
    rows_b = {r["task"]: r for r in read_csv(Path(b) / "metrics_summary.csv")}
    out = []
    for task in dict.fromkeys(list(rows_a) + list(rows_b)):
        pa = float(rows_a[task]["meanOutputPsnr"]) if task in rows_a else math.nan
        pb = float(rows_b[task]["meanOutputPsnr"]) if task in rows_b else math.nan
        out.append({"task": task, "psnrA": pa, "psnrB": pb, "delta": pb - pa})
    return out
