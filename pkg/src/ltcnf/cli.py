"""Command-line pipeline: synth | preprocess | train | evaluate | predict | compare | ensemble.

Settings resolve as built-in defaults < ``--config`` file (flat ``key = value``,
``#`` comments) < command-line flags. Exit codes: 0 success, 1 runtime or
numeric failure, 2 usage / config / data-format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass

import numpy as np

from . import data, ensemble, metrics, network, stats, training
from .errors import ConfigError, DataError, RuntimeFailure, UsageError
from .util import atomic_write_text, named_rng

log = logging.getLogger("ltcnf")


def _csv_list(text: str) -> tuple:
    return tuple(part.strip() for part in text.split(",") if part.strip())


@dataclass(frozen=True)
class Option:
    key: str
    type: object
    default: object
    commands: tuple
    help: str = ""


_DATA = ("preprocess", "train", "evaluate", "predict", "ensemble")
_PREP = ("preprocess", "train", "ensemble")
_NET = ("train", "ensemble")

OPTIONS = [
    Option("seed", int, 0, ("synth",) + _PREP, "master seed for every random stream"),
    Option("samples", int, 2000, ("synth",)),
    Option("features", int, 32, ("synth",)),
    Option("separation", float, 2.0, ("synth",)),
    Option("balance", float, 0.5, ("synth",), "fraction of NF1 samples"),
    Option("missing_fraction", float, 0.01, ("synth",)),
    Option("data", str, None, _DATA, "input CSV"),
    Option("label_column", str, data.DEFAULT_LABEL_COLUMN, _DATA),
    Option("positive_token", str, data.POSITIVE_TOKEN, _PREP),
    Option("timesteps", int, 1, _PREP),
    Option("train_fraction", float, 0.64, _PREP),
    Option("val_fraction", float, 0.16, _PREP),
    Option("test_fraction", float, 0.20, _PREP),
    Option("normalize_fit", str, "train", _PREP, "fit z-score on 'train' rows or 'all' rows"),
    Option("cell", str, "ltc", ("train",), "ltc or lstm"),
    Option("units", int, 128, _NET),
    Option("layers", int, 2, _NET),
    Option("dropout", float, 0.2, _NET),
    Option("step_size", float, 1.0, _NET),
    Option("unfold_steps", int, 6, _NET),
    Option("epochs", int, 50, _NET),
    Option("batch_size", int, 64, _NET),
    Option("learning_rate", float, 1e-3, _NET),
    Option("early_stop_patience", int, 10, _NET),
    Option("scheduler_factor", float, 0.5, _NET),
    Option("scheduler_patience", int, 5, _NET),
    Option("min_learning_rate", float, 1e-5, _NET),
    Option("bases", _csv_list, ("ltc", "logreg"), ("ensemble",), "comma-separated: ltc,lstm,logreg"),
    Option("meta_rows", str, "val", ("ensemble",), "rows used to fit the meta-model: val or train"),
    Option("logreg_learning_rate", float, 0.1, ("ensemble",)),
    Option("logreg_epochs", int, 500, ("ensemble",)),
    Option("logreg_l2", float, 1e-4, ("ensemble",)),
    Option("model", str, None, ("train", "evaluate", "predict"), "model JSON path"),
    Option("report", str, None, ("train",), "train report JSON path"),
    Option("split", str, "all", ("evaluate",), "rows to score: all, train, val or test"),
    Option("roc", str, None, ("evaluate",), "ROC curve CSV path"),
    Option("coefficients", str, None, ("ensemble",), "coefficient CSV path"),
    Option("alpha", float, 0.05, ("compare",)),
    Option("out", str, None, ("synth", "preprocess", "evaluate", "predict", "compare", "ensemble")),
]
OPTION_BY_KEY = {o.key: o for o in OPTIONS}


def read_config_file(path) -> dict:
    """Parse a flat ``key = value`` file; unknown keys and bad values are config errors."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    values = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in OPTION_BY_KEY:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _convert(OPTION_BY_KEY[key], value, f"{path}:{lineno}")
    return values


def _convert(option: Option, value, where: str):
    try:
        return option.type(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: invalid value {value!r} for {option.key}") from None


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults < config file < flags, restricted to the options this command accepts."""
    settings = {o.key: o.default for o in OPTIONS if command in o.commands}
    if args.config:
        for key, value in read_config_file(args.config).items():
            if key in settings:
                settings[key] = value
    for key in settings:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    return settings


def _require(settings: dict, *keys):
    missing = [k for k in keys if not settings.get(k)]
    if missing:
        raise ConfigError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _write_json(path, doc) -> None:
    atomic_write_text(path, json.dumps(_jsonable(doc), indent=2) + "\n")


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


# ---------------------------------------------------------------- configs


def _preprocess_config(s: dict) -> data.PreprocessConfig:
    return data.PreprocessConfig(
        timesteps=s["timesteps"],
        positive_token=s["positive_token"],
        fractions=(s["train_fraction"], s["val_fraction"], s["test_fraction"]),
        fit_on=s["normalize_fit"],
        seed=s["seed"],
    )


def _train_config(s: dict) -> training.TrainConfig:
    return training.TrainConfig(
        epochs=s["epochs"], batch_size=s["batch_size"], learning_rate=s["learning_rate"],
        early_stop_patience=s["early_stop_patience"], scheduler_factor=s["scheduler_factor"],
        scheduler_patience=s["scheduler_patience"], min_learning_rate=s["min_learning_rate"],
        seed=s["seed"],
    )


def _net_config(s: dict) -> ensemble.NetConfig:
    if s["layers"] < 1:
        raise ConfigError(f"layers must be >= 1, got {s['layers']}")
    return ensemble.NetConfig(s["units"], s["layers"], s["dropout"], s["step_size"], s["unfold_steps"])


def _preprocessing_record(s: dict, prepared: data.PreparedData, rows: int) -> dict:
    return {
        "stats": prepared.stats.to_dict(),
        "columns": list(prepared.columns),
        "label_column": s["label_column"],
        "positive_token": s["positive_token"],
        "timesteps": s["timesteps"],
        "fractions": [s["train_fraction"], s["val_fraction"], s["test_fraction"]],
        "normalize_fit": s["normalize_fit"],
        "split_seed": s["seed"],
        "rows": rows,
    }


# ---------------------------------------------------------------- commands


def cmd_synth(s: dict) -> int:
    _require(s, "out")
    cfg = data.SynthConfig(s["samples"], s["features"], s["separation"], s["balance"],
                           s["missing_fraction"], s["seed"])
    table = data.synth_generate(cfg)
    data.write_csv(table, s["out"])
    positives = sum(label == data.POSITIVE_TOKEN for label in table.labels)
    print(f"{s['out']}: {len(table)} rows, {positives} {data.POSITIVE_TOKEN}, {len(table) - positives} other")
    return 0


def cmd_preprocess(s: dict) -> int:
    _require(s, "data", "out")
    table = data.load_csv(s["data"], s["label_column"])
    prepared = data.prepare(table, _preprocess_config(s))
    doc = {
        "preprocessing": _preprocessing_record(s, prepared, len(table)),
        "split": {
            "train": prepared.split.train.tolist(),
            "val": prepared.split.val.tolist(),
            "test": prepared.split.test.tolist(),
        },
        "class_counts": {
            name: {data.CLASS_NAMES[c]: int(np.sum(part.labels == c)) for c in range(2)}
            for name, part in (("train", prepared.train), ("val", prepared.val), ("test", prepared.test))
        },
        "shape": {name: list(part.features.shape)
                  for name, part in (("train", prepared.train), ("val", prepared.val), ("test", prepared.test))},
    }
    _write_json(s["out"], doc)
    print(f"{s['out']}: train {len(prepared.train)}, val {len(prepared.val)}, test {len(prepared.test)}")
    return 0


def cmd_train(s: dict) -> int:
    _require(s, "data", "model", "report")
    table = data.load_csv(s["data"], s["label_column"])
    prepared = data.prepare(table, _preprocess_config(s))
    if len(prepared.val) == 0:
        raise ConfigError("training needs a non-empty validation split (val_fraction > 0)")
    net_cfg = _net_config(s)
    spec = network.NetworkSpec.default(
        prepared.train.features.shape[2], units=net_cfg.units, cell_kind=s["cell"],
        dropout_rate=net_cfg.dropout_rate, num_layers=net_cfg.num_layers,
        step_size=net_cfg.step_size, unfold_steps=net_cfg.unfold_steps,
    )
    train_cfg = _train_config(s)
    model = network.init_model(spec, named_rng(s["seed"], "init"))
    model, report = training.train(model, prepared.train, prepared.val, train_cfg)
    model = model.with_preprocessing(_preprocessing_record(s, prepared, len(table)))
    doc = report.to_dict()
    doc["config"] = {k: v for k, v in s.items() if k not in ("data", "model", "report")}
    network.model_save(model, s["model"])
    _write_json(s["report"], doc)
    print(f"trained {report.stopped_epoch} epochs; best epoch {report.best_epoch} "
          f"val_loss={report.best_val_loss:.5f} val_acc={report.best_val_accuracy:.4f}")
    return 0


def _load_for_inference(s: dict, require_label: bool):
    model = network.model_load(s["model"])
    pre = model.preprocessing
    if not pre:
        raise DataError(f"{s['model']}: model carries no preprocessing record")
    table = data.load_csv(s["data"], pre["label_column"], require_label=require_label)
    expected = len(pre["stats"]["mean"])
    if len(table.columns) != expected:
        raise DataError(f"{s['data']} has {len(table.columns)} feature columns, model expects {expected}")
    x = data.transform(table, data.PreprocessStats.from_dict(pre["stats"]), pre["timesteps"])
    return model, table, x


def cmd_evaluate(s: dict) -> int:
    _require(s, "model", "data", "out")
    model, table, x = _load_for_inference(s, require_label=True)
    pre = model.preprocessing
    y = data.binarize_labels(table.labels, pre["positive_token"])
    if s["split"] != "all":
        if s["split"] not in ("train", "val", "test"):
            raise ConfigError(f"split must be all, train, val or test, got {s['split']!r}")
        if len(table) != pre["rows"]:
            raise DataError(f"--split needs the training file ({pre['rows']} rows), got {len(table)} rows")
        idx = getattr(data.split_dataset(len(table), tuple(pre["fractions"]), pre["split_seed"]), s["split"])
        x, y = x[idx], y[idx]
    if len(y) == 0:
        raise DataError("no rows to evaluate")
    probs = network.predict_proba(model, x)
    report = metrics.evaluate_predictions(y, probs)
    doc = report.to_dict()
    doc["split"] = s["split"]
    doc["rows"] = int(len(y))
    _write_json(s["out"], doc)
    if s["roc"]:
        if math.isnan(report.auc_roc):
            raise DataError("ROC curve needs both classes present")
        atomic_write_text(s["roc"], metrics.roc_to_csv(metrics.roc_curve(probs[:, 1], y)))
    print(f"accuracy={report.accuracy:.4f} auc={report.auc_roc:.4f} rows={len(y)}")
    return 0


def cmd_predict(s: dict) -> int:
    _require(s, "model", "data", "out")
    model, table, x = _load_for_inference(s, require_label=False)
    probs = network.predict_proba(model, x)
    lines = ["row_index,p_not_nf1,p_nf1,predicted_label"]
    for i, (p0, p1) in enumerate(probs):
        # exact 0.5/0.5 ties resolve to class 0
        lines.append(f"{i},{float(p0)!r},{float(p1)!r},{int(p1 > p0)}")
    atomic_write_text(s["out"], "\n".join(lines) + "\n")
    print(f"{s['out']}: {len(probs)} predictions")
    return 0


def _read_runs(path) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}") from None
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from None
    if isinstance(doc, dict) and "values" in doc:
        doc = doc["values"]
    if not isinstance(doc, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in doc):
        raise DataError(f"{path}: expected a JSON array of numbers (or an object with 'values')")
    if len(doc) < 2:
        raise DataError(f"{path}: need at least 2 per-seed values, got {len(doc)}")
    return [float(v) for v in doc]


def cmd_compare(s: dict, run_a: str, run_b: str) -> int:
    a, b = _read_runs(run_a), _read_runs(run_b)
    result = stats.compare_models(a, b, s["alpha"])
    text = json.dumps(_jsonable(result.to_dict()), indent=2) + "\n"
    if s["out"]:
        atomic_write_text(s["out"], text)
    sys.stdout.write(text)
    return 0


def cmd_ensemble(s: dict) -> int:
    _require(s, "data", "out")
    table = data.load_csv(s["data"], s["label_column"])
    cfg = ensemble.CombinerConfig(
        bases=tuple(s["bases"]),
        preprocess=_preprocess_config(s),
        net=_net_config(s),
        train=_train_config(s),
        logreg=ensemble.LogRegConfig(s["logreg_learning_rate"], s["logreg_epochs"], s["logreg_l2"]),
        meta=ensemble.LogRegConfig(s["logreg_learning_rate"], s["logreg_epochs"], s["logreg_l2"]),
        meta_rows=s["meta_rows"],
    )
    result = ensemble.run_combiner_pipeline(table, cfg)
    _write_json(s["out"], result.to_dict())
    if s["coefficients"]:
        rows = result.feature_coefficients or result.meta_coefficients
        atomic_write_text(s["coefficients"], ensemble.coefficients_to_csv(rows))
    print(f"combiner accuracy={result.metrics.accuracy:.4f} meta_feature_width={result.meta_feature_width}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "compare": cmd_compare,
    "ensemble": cmd_ensemble,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ltcnf", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key = value settings file")
        if name == "compare":
            p.add_argument("run_a")
            p.add_argument("run_b")
        for opt in OPTIONS:
            if name in opt.commands:
                help_text = opt.help + (f" (default: {opt.default})" if opt.default is not None else "")
                p.add_argument("--" + opt.key.replace("_", "-"), dest=opt.key, type=opt.type,
                               default=None, help=help_text.strip())
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = resolve(args.command, args)
        if args.command == "compare":
            return cmd_compare(settings, args.run_a, args.run_b)
        return COMMANDS[args.command](settings)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror}", file=sys.stderr)
        return 2
    except RuntimeFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # exit codes are limited to 0/1/2
        print(f"error: unexpected {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
