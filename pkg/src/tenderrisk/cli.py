"""Command-line interface: ``tenderrisk <subcommand> ...``.

Every subcommand writes its outputs under ``--out`` together with a
``manifest.json`` listing config echo, input hashes and artifact hashes.
Randomness flows from the single ``--seed`` (see :mod:`tenderrisk.seeding`).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path

import numpy as np

from . import __version__
from .domain import DataIntegrityError, InvalidInputError, SchemaError, SegmentKey, load_frame, read_csv, save_frame, write_csv
from .labeling import Quarter, class_count_table, derive_labels, partition_by_segment

log = logging.getLogger("tenderrisk")

CSV_COLUMNS = ("segment", "mode", "avg_accuracy", "avg_precision", "avg_recall", "avg_f1", "avg_auc",
               "class0_auc", "class1_auc", "class2_auc", "class3_auc")


# --------------------------------------------------------------------------
# configuration and manifest
# --------------------------------------------------------------------------

@dataclass
class RunConfig:
    data: str = ""
    segments: list = field(default_factory=list)
    schema: str = ""
    hyperparams: dict = field(default_factory=dict)
    train_window: int = 4
    test_window: int = 1
    modes: list = field(default_factory=lambda: ["none"])
    budget: int = 35
    grid_resolution: int = 8
    scope: str = "per-segment"
    metric: str = "f1"
    averaging: str = "weighted"
    out: str = ""
    seed: int = 0

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as fh:
            d = json.load(fh)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def echo(self) -> dict:
        """Config fields that determine results (paths excluded)."""
        d = self.to_dict()
        d.pop("out")
        d.pop("data")
        d.pop("schema")
        return d

    def hp(self):
        from .gbdt import Hyperparams
        return Hyperparams(**self.hyperparams)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    def __init__(self, command: str, config: dict, out: Path):
        self.command = command
        self.config = config
        self.out = out
        self.inputs: dict[str, str] = {}
        self.artifacts: list[str] = []
        self.started = time.time()

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def add(self, path) -> Path:
        self.artifacts.append(str(Path(path).relative_to(self.out)))
        return Path(path)

    def write(self) -> Path:
        doc = {
            "tool": "tenderrisk",
            "version": __version__,
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "artifacts": {a: sha256_file(self.out / a) for a in self.artifacts},
            "wall_clock_seconds": round(time.time() - self.started, 3),
        }
        path = self.out / "manifest.json"
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path


def verify_manifest(path) -> list[str]:
    """Artifacts whose content no longer matches the recorded hash."""
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    bad = []
    for name, digest in doc["artifacts"].items():
        p = path.parent / name
        if not p.exists() or sha256_file(p) != digest:
            bad.append(name)
    return bad


# --------------------------------------------------------------------------
# report emission
# --------------------------------------------------------------------------

def fmt4(value) -> str:
    """Four decimals, round-half-even on the shortest decimal repr; blank if absent."""
    if value is None or (isinstance(value, float) and np.isnan(value)):
        return ""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.0001"), rounding=ROUND_HALF_EVEN))


def report_row(report) -> list[str]:
    a = report.averages
    return [report.segment, report.mode, fmt4(a.get("accuracy")), fmt4(a.get("precision")),
            fmt4(a.get("recall")), fmt4(a.get("f1")), fmt4(a.get("macro_auc")),
            *(fmt4(a.get(f"class{k}_auc")) for k in range(4))]


def emit_report(reports, out_dir, formats=("json", "csv"), stem: str = "report") -> list[Path]:
    """Write reports as JSON (full per-fold detail) and/or the summary CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        path = out_dir / f"{stem}.json"
        with open(path, "w") as fh:
            json.dump([r.to_dict() for r in reports], fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(path)
    if "csv" in formats:
        path = out_dir / f"{stem}.csv"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in reports:
            w.writerow(report_row(r))
        path.write_text(buf.getvalue())
        written.append(path)
    return written


def load_reports(path):
    from .backtest import BacktestReport
    with open(path) as fh:
        return [BacktestReport.from_dict(d) for d in json.load(fh)]


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, data: bool = True) -> None:
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--jobs", type=int, default=1, help="worker threads (never changes outputs)")
    p.add_argument("--config", help="run config JSON; flags override its values")
    if data:
        p.add_argument("--data", help="prepared dataset (.npz written by 'prepare')")
        p.add_argument("--segment", action="append", default=None,
                       help="segment BU/GEO to include (repeatable; default all)")
        p.add_argument("--schema", help="feature schema JSON (default: derived from the data)")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iterations", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--num-leaves", type=int)
    p.add_argument("--min-data-in-leaf", type=int)
    p.add_argument("--max-bin", type=int)
    p.add_argument("--l2", type=float)


def _add_search(p: argparse.ArgumentParser) -> None:
    p.add_argument("--budget", type=int, help="Bayesian optimization evaluations")
    p.add_argument("--grid-resolution", type=int, help="grid resolution r")
    p.add_argument("--metric", choices=("precision", "recall", "f1", "auc", "accuracy"))
    p.add_argument("--averaging", choices=("weighted", "macro"))


def _add_plan(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train-window", type=int)
    p.add_argument("--test-window", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tenderrisk", description="Tender outcome modelling pipeline")
    parser.add_argument("--version", action="version", version=f"tenderrisk {__version__}")
    parser.add_argument("--log-level", default=os.environ.get("TENDERRISK_LOG_LEVEL", "WARNING"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic snapshot dataset")
    p.add_argument("--generator", required=True, help="generator config JSON")
    _add_common(p, data=False)

    p = sub.add_parser("prepare", help="label snapshots and compute temporal features")
    p.add_argument("--input", required=True, help="snapshot CSV (typed header)")
    _add_common(p, data=False)

    p = sub.add_parser("featurize", help="fit the featurizer on a quarter span and write matrices")
    _add_common(p)
    p.add_argument("--train-quarters", required=True, help="first:last quarter, e.g. 2017Q1:2017Q4")
    p.add_argument("--apply-quarters", help="quarters to transform with the fitted featurizer")

    p = sub.add_parser("train", help="train one model on a quarter span")
    _add_common(p)
    _add_model(p)
    p.add_argument("--train-quarters", required=True)
    p.add_argument("--weights", help="best-weights JSON from 'optimize'")

    p = sub.add_parser("backtest", help="rolling-window backtest")
    _add_common(p)
    _add_model(p)
    _add_search(p)
    _add_plan(p)
    p.add_argument("--mode", action="append", choices=("none", "grid", "bayes"))
    p.add_argument("--scope", choices=("per-segment", "per-fold"))
    p.add_argument("--save-models", action="store_true")

    p = sub.add_parser("optimize", help="search class weights on a train span")
    _add_common(p)
    _add_model(p)
    _add_search(p)
    p.add_argument("--method", choices=("grid", "bayes"), default="bayes")
    p.add_argument("--train-quarters", required=True, help="last quarter is the validation quarter")

    p = sub.add_parser("sweep-window", help="backtest every train-window size")
    _add_common(p)
    _add_model(p)
    _add_search(p)
    p.add_argument("--sizes", default="2:10", help="first:last window size")
    p.add_argument("--mode", action="append", choices=("none", "grid", "bayes"))

    p = sub.add_parser("select-features", help="importance-threshold feature selection sweep")
    _add_common(p)
    _add_model(p)
    _add_plan(p)
    p.add_argument("--thresholds", default="0,10,20,30")

    p = sub.add_parser("report", help="re-emit CSV/JSON from report JSON files")
    p.add_argument("inputs", nargs="+", help="report.json files")
    p.add_argument("--out", required=True)
    p.add_argument("--format", action="append", choices=("json", "csv"))
    return parser


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_json(args.config) if getattr(args, "config", None) else RunConfig()
    over = {}
    for attr, key in (("data", "data"), ("schema", "schema"), ("train_window", "train_window"),
                      ("test_window", "test_window"), ("budget", "budget"),
                      ("grid_resolution", "grid_resolution"), ("scope", "scope"), ("metric", "metric"),
                      ("averaging", "averaging"), ("seed", "seed"), ("out", "out")):
        v = getattr(args, attr, None)
        if v is not None:
            over[key] = v
    if getattr(args, "segment", None):
        over["segments"] = list(args.segment)
    if getattr(args, "mode", None):
        over["modes"] = list(dict.fromkeys(args.mode))
    hp = dict(cfg.hyperparams)
    for attr, key in (("iterations", "num_iterations"), ("learning_rate", "learning_rate"),
                      ("num_leaves", "num_leaves"), ("min_data_in_leaf", "min_data_in_leaf"),
                      ("max_bin", "max_bin"), ("l2", "l2_reg")):
        v = getattr(args, attr, None)
        if v is not None:
            hp[key] = v
    over["hyperparams"] = hp
    return replace(cfg, **over)


def set_jobs(jobs: int) -> None:
    if jobs < 1:
        raise InvalidInputError("--jobs must be at least 1")
    import numba
    numba.set_num_threads(min(jobs, numba.config.NUMBA_NUM_THREADS))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _load_prepared(cfg: RunConfig, manifest: Manifest):
    if not cfg.data:
        raise InvalidInputError("no prepared dataset given (--data)")
    manifest.add_input(cfg.data)
    frame, extra = load_frame(cfg.data)
    datasets = partition_by_segment(frame)
    if cfg.segments:
        wanted = [SegmentKey.parse(s) for s in cfg.segments]
        missing = [str(k) for k in wanted if k not in datasets]
        if missing:
            raise InvalidInputError(f"segments not in the dataset: {missing}")
        datasets = {k: datasets[k] for k in wanted}
    return datasets, extra


def _schema(cfg: RunConfig, frame, manifest):
    from .features import FeatureSchema, default_schema
    if cfg.schema:
        manifest.add_input(cfg.schema)
        return FeatureSchema.from_json(cfg.schema)
    return default_schema(frame)


def _quarter_span(text: str) -> tuple:
    first, _, last = text.partition(":")
    a = Quarter.parse(first).index
    b = Quarter.parse(last or first).index
    if b < a:
        raise InvalidInputError(f"empty quarter span {text!r}")
    return tuple(range(a, b + 1))


def cmd_synth(args, cfg, out, manifest):
    from .synthgen import GeneratorConfig, generate_portfolio
    manifest.add_input(args.generator)
    gen = GeneratorConfig.from_json(args.generator)
    if args.seed is not None:
        gen = replace(gen, seed=args.seed)
    frame = generate_portfolio(gen)
    write_csv(frame, out / "snapshots.csv")
    manifest.add(out / "snapshots.csv")
    gen.to_json(out / "generator_config.json")
    manifest.add(out / "generator_config.json")


def cmd_prepare(args, cfg, out, manifest):
    from .features import add_temporal_features
    manifest.add_input(args.input)
    labeling = derive_labels(read_csv(args.input))
    frame = add_temporal_features(labeling.labeled)
    save_frame(frame, out / "prepared.npz", extra={"inflight": sorted(map(str, labeling.inflight))})
    manifest.add(out / "prepared.npz")
    table = class_count_table(partition_by_segment(frame))
    table.to_csv(out / "class_counts.csv", index=False, lineterminator="\n")
    manifest.add(out / "class_counts.csv")


def cmd_featurize(args, cfg, out, manifest):
    from .backtest import prepare_frame
    from .features import Featurizer
    from .seeding import derive_seed
    datasets, _ = _load_prepared(cfg, manifest)
    train_q = _quarter_span(args.train_quarters)
    apply_q = _quarter_span(args.apply_quarters) if args.apply_quarters else ()
    for key, ds in datasets.items():
        frame = prepare_frame(ds.frame)
        schema = _schema(cfg, ds.frame, manifest)
        tr = frame[frame["quarter"].isin(train_q)]
        if len(tr) == 0:
            raise InvalidInputError(f"segment {key} has no rows in {args.train_quarters}")
        fz = Featurizer(schema, seed=derive_seed(cfg.seed, "features", str(key)))
        tag = f"{key.business_unit}_{key.geography}"
        fz.fit_transform(tr).save(out / f"features_{tag}_train.npz")
        manifest.add(out / f"features_{tag}_train.npz")
        if apply_q:
            fz.transform(frame[frame["quarter"].isin(apply_q)]).save(out / f"features_{tag}_apply.npz")
            manifest.add(out / f"features_{tag}_apply.npz")
        schema.to_json(out / f"schema_{tag}.json")
        manifest.add(out / f"schema_{tag}.json")


def cmd_train(args, cfg, out, manifest):
    from .backtest import prepare_frame
    from .features import Featurizer
    from .gbdt import save_model
    from .imbalance import load_best_weights, train_weighted
    from .seeding import derive_seed
    datasets, _ = _load_prepared(cfg, manifest)
    weights = None
    if args.weights:
        manifest.add_input(args.weights)
        weights = load_best_weights(args.weights)
    train_q = _quarter_span(args.train_quarters)
    for key, ds in datasets.items():
        frame = prepare_frame(ds.frame)
        schema = _schema(cfg, ds.frame, manifest)
        tr = frame[frame["quarter"].isin(train_q)]
        if len(tr) == 0:
            raise InvalidInputError(f"segment {key} has no rows in {args.train_quarters}")
        fz = Featurizer(schema, seed=derive_seed(cfg.seed, "features", str(key)))
        m = fz.fit_transform(tr)
        X, names = m.train_view()
        model = train_weighted(X, m.labels, weights, cfg.hp(), seed=derive_seed(cfg.seed, "gbdt", str(key)),
                               feature_names=names, schema_fingerprint=m.fingerprint)
        tag = f"{key.business_unit}_{key.geography}"
        save_model(model, out / f"model_{tag}.bin")
        manifest.add(out / f"model_{tag}.bin")


def _settings(cfg: RunConfig, mode: str):
    from .backtest import BacktestSettings
    from .imbalance import ObjectiveSpec
    return BacktestSettings(mode=mode, hp=cfg.hp(), objective=ObjectiveSpec(cfg.metric, cfg.averaging),
                            budget=cfg.budget, grid_resolution=cfg.grid_resolution, scope=cfg.scope,
                            seed=cfg.seed)


def cmd_backtest(args, cfg, out, manifest):
    from .backtest import build_fold_plan, prepare_frame, run_backtest
    from .gbdt import save_model
    from .seeding import derive_seed
    datasets, _ = _load_prepared(cfg, manifest)
    reports = []
    for key, ds in datasets.items():
        frame = prepare_frame(ds.frame)
        plan = build_fold_plan(np.unique(frame["quarter"]), cfg.train_window, cfg.test_window)
        schema = _schema(cfg, ds.frame, manifest)
        for mode in cfg.modes:
            settings = _settings(replace(cfg, seed=derive_seed(cfg.seed, "segment", str(key))), mode)
            rep, models = run_backtest(frame, plan, settings, schema, key, keep_models=True)
            reports.append(rep)
            if args.save_models:
                tag = f"{key.business_unit}_{key.geography}_{mode}"
                for fold, model in zip(rep.folds, models):
                    if model is not None:
                        p = out / "models" / f"model_{tag}_fold{fold.index}.bin"
                        p.parent.mkdir(exist_ok=True)
                        save_model(model, p)
                        manifest.add(p)
    for p in emit_report(reports, out):
        manifest.add(p)


def cmd_optimize(args, cfg, out, manifest):
    from .backtest import BacktestSettings, optimize_weights, prepare_frame
    from .seeding import derive_seed
    datasets, _ = _load_prepared(cfg, manifest)
    quarters = _quarter_span(args.train_quarters)
    if len(quarters) < 2:
        raise InvalidInputError("optimize needs at least two quarters (the last one validates)")
    for key, ds in datasets.items():
        frame = prepare_frame(ds.frame)
        schema = _schema(cfg, ds.frame, manifest)
        settings = _settings(replace(cfg, seed=derive_seed(cfg.seed, "segment", str(key))), args.method)
        _, result = optimize_weights(frame, quarters, schema, settings, "segment")
        tag = f"{key.business_unit}_{key.geography}"
        result.write_trace_csv(out / f"trace_{tag}.csv")
        result.write_best_json(out / f"best_weights_{tag}.json")
        manifest.add(out / f"trace_{tag}.csv")
        manifest.add(out / f"best_weights_{tag}.json")


def _write_rows(path: Path, rows: list[dict]) -> None:
    keys = list(dict.fromkeys(k for r in rows for k in r))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for r in rows:
        cells = []
        for k in keys:
            v = r.get(k)
            if isinstance(v, float):
                cells.append(fmt4(v))
            elif isinstance(v, list):
                cells.append(";".join(map(str, v)))
            else:
                cells.append("" if v is None else str(v))
        w.writerow(cells)
    path.write_text(buf.getvalue())


def cmd_sweep_window(args, cfg, out, manifest):
    from .backtest import window_sweep
    from .seeding import derive_seed
    datasets, _ = _load_prepared(cfg, manifest)
    first, _, last = args.sizes.partition(":")
    sizes = range(int(first), int(last or first) + 1)
    rows = []
    for key, ds in datasets.items():
        schema = _schema(cfg, ds.frame, manifest)
        for mode in cfg.modes:
            settings = _settings(replace(cfg, seed=derive_seed(cfg.seed, "segment", str(key))), mode)
            for r in window_sweep(ds.frame, sizes, cfg.test_window, settings, schema, str(key)):
                rows.append({"segment": str(key), "mode": mode, **r})
    _write_rows(out / "window_sweep.csv", rows)
    manifest.add(out / "window_sweep.csv")


def cmd_select_features(args, cfg, out, manifest):
    from .backtest import build_fold_plan, feature_selection_sweep, prepare_frame
    from .seeding import derive_seed
    datasets, _ = _load_prepared(cfg, manifest)
    thresholds = [int(t) for t in args.thresholds.split(",") if t.strip()]
    rows = []
    for key, ds in datasets.items():
        frame = prepare_frame(ds.frame)
        plan = build_fold_plan(np.unique(frame["quarter"]), cfg.train_window, cfg.test_window)
        schema = _schema(cfg, ds.frame, manifest)
        settings = _settings(replace(cfg, seed=derive_seed(cfg.seed, "segment", str(key))), "none")
        for r in feature_selection_sweep(frame, plan, thresholds, settings, schema, str(key)):
            rows.append({"segment": str(key), **r})
    _write_rows(out / "feature_selection.csv", rows)
    manifest.add(out / "feature_selection.csv")


def cmd_report(args, out, manifest):
    reports = []
    for path in args.inputs:
        manifest.add_input(path)
        reports.extend(load_reports(path))
    for p in emit_report(reports, out, tuple(args.format or ("json", "csv"))):
        manifest.add(p)


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "backtest": cmd_backtest,
    "optimize": cmd_optimize,
    "sweep-window": cmd_sweep_window,
    "select-features": cmd_select_features,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "report":
            manifest = Manifest("report", {"inputs": list(args.inputs)}, out)
            cmd_report(args, out, manifest)
        else:
            set_jobs(args.jobs)
            cfg = resolve_config(args)
            manifest = Manifest(args.command, cfg.echo(), out)
            with open(out / "run_config.json", "w") as fh:
                json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
            COMMANDS[args.command](args, cfg, out, manifest)
        manifest.write()
    except (InvalidInputError, DataIntegrityError, SchemaError, FileNotFoundError, OSError) as exc:
        print(f"tenderrisk {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
