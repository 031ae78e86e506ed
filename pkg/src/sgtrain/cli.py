"""Command-line front end: ``python -m sgtrain <subcommand> [--config FILE] [flags]``.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 data or
format error, 4 numeric failure.
"""

import argparse
import csv
import os
import sys

import numpy as np

from . import datasets as dsets
from . import evaluation as ev
from . import report as rp
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ALIASES, SCHEMA, RunConfig, parse_config
from .errors import ConfigError, DataError, FormatError, NumericError, SGTError
from .models import ModelSpec, build_model
from .training import TrainConfig, TrainReport, train

SUBCOMMANDS = ("gen-data", "train", "saliency", "eval-drop", "eval-benchmark", "eval-vanishing", "report")

# short flags mapping to one or more config keys
SHORT_FLAGS = {
    "kind": [("data", "kind")],
    "path": [("data", "path")],
    "mu": [("data", "mu")],
    "seed": [("data", "seed"), ("model", "seed"), ("train", "seed")],
    "model": [("model", "kind")],
    "mode": [("train", "mode")],
    "k": [("train", "k")],
    "lambda": [("train", "lambda")],
    "lr": [("train", "lr")],
    "epochs": [("train", "epochs")],
    "optimizer": [("train", "optimizer")],
    "methods": [("eval", "methods")],
    "levels": [("eval", "levels")],
    "replacement": [("eval", "replacement")],
    "seeds": [("eval", "seeds")],
    "out": [("out", "directory")],
}


class UsageError(SGTError):
    exit_code = 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def flag_name(section, key):
    return f"--{section}-{key.replace('_', '-')}"


def _add_config_flags(p):
    p.add_argument("--config", help="sectioned key = value run configuration")
    g = p.add_argument_group("configuration overrides (flags win over the config file)")
    for sec, keys in SCHEMA.items():
        for key in keys:
            g.add_argument(flag_name(sec, key), dest=f"cfg:{sec}:{key}", metavar="VALUE")
    for (sec, alias), key in ALIASES.items():
        if alias.isascii():
            g.add_argument(flag_name(sec, alias), dest=f"cfg:{sec}:{key}", metavar="VALUE")
    for short, targets in SHORT_FLAGS.items():
        g.add_argument(f"--{short}", dest=f"short:{short}", metavar="VALUE",
                       help="sets " + ", ".join(f"{s}.{k}" for s, k in targets))


def build_parser():
    parser = _Parser(prog="sgtrain", description="Saliency-guided training and interpretability evaluation.")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True
    helps = {
        "gen-data": "write a synthetic dataset (train/test CSV plus ground-truth masks)",
        "train": "train one model; writes the per-epoch report CSV and a checkpoint",
        "saliency": "dump saliency maps of a checkpoint on the test split",
        "eval-drop": "accuracy-drop curves and their areas for a checkpoint",
        "eval-benchmark": "train and score every (arch, kind, mode, seed) cell on synthetic data",
        "eval-vanishing": "LSTM recall for informative boxes early, mid and late in time",
        "report": "summarize metric CSVs into tables and SVG line plots",
    }
    for name in SUBCOMMANDS:
        p = sub.add_parser(name, help=helps[name], description=helps[name])
        _add_config_flags(p)
        if name in ("saliency", "eval-drop"):
            p.add_argument("--checkpoint", required=True, help="model checkpoint to evaluate")
        if name == "saliency":
            p.add_argument("--limit", type=int, default=10, help="number of test samples to dump")
        if name == "train":
            p.add_argument("--checkpoint-out", help="checkpoint path (default OUT/model.ckpt)")
        if name == "report":
            p.add_argument("inputs", nargs="+", help="metric report or curve CSV files")
    return parser


def resolve_config(args):
    """Config file values, then flag overrides; short flags apply before explicit section flags."""
    cfg = parse_config(args.config) if args.config else RunConfig()
    ns = vars(args)
    for short, targets in SHORT_FLAGS.items():
        v = ns.get(f"short:{short}")
        if v is not None:
            for sec, key in targets:
                cfg.set(sec, key, v, source="command line")
    for name, v in ns.items():
        if name.startswith("cfg:") and v is not None:
            _, sec, key = name.split(":")
            cfg.set(sec, key, v, source="command line")
    return cfg


# -- helpers ------------------------------------------------------------------

def _out(cfg, *parts):
    d = cfg.get("out", "directory")
    os.makedirs(d, exist_ok=True)
    return os.path.join(d, *parts)


def load_dataset(cfg):
    """Dataset named by the [data] section: a synthetic kind, a CSV file or an IDX directory."""
    data = cfg["data"]
    kind = data["kind"]
    if kind in dsets.ALL_KINDS:
        ds = dsets.generate(kind, data["mu"], data["seed"], n_train=data["n_train"], n_test=data["n_test"])
    elif kind == "csv":
        if not data["path"] or not data["shape"]:
            raise ConfigError("csv data needs data.path and data.shape", cfg.lines.get(("data", "path")), cfg.path)
        background = "standard_normal" if dsets.mask_path_for(data["path"]) and os.path.exists(
            dsets.mask_path_for(data["path"])) else None
        ds = dsets.load_csv(data["path"], data["shape"], data["test_path"], data["n_classes"] or None, background)
    elif kind in ("idx", "mnist"):
        if not data["path"]:
            raise ConfigError("idx data needs data.path (a directory of IDX files)", None, cfg.path)
        ds = load_idx_dir(data["path"], data["seed"])
    else:
        raise ConfigError(f"data.kind {kind!r} is not a synthetic kind, 'csv' or 'idx'",
                          cfg.lines.get(("data", "kind")), cfg.path)
    if data["limit"]:
        n_test = max(1, data["limit"] * len(ds.x_test) // max(1, len(ds.x_train) + len(ds.x_test)))
        ds = ds.subset(data["limit"] - n_test, n_test)
    return ds


IDX_NAMES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte",
             "t10k-labels-idx1-ubyte")


def load_idx_dir(path, seed=0):
    files = [os.path.join(path, n) for n in IDX_NAMES]
    if not os.path.exists(files[0]) or not os.path.exists(files[1]):
        raise DataError(f"{path}: expected {IDX_NAMES[0]} and {IDX_NAMES[1]}")
    if os.path.exists(files[2]) and os.path.exists(files[3]):
        return dsets.load_idx(*files)
    return dsets.load_idx(files[0], files[1], seed=seed)


def model_spec(cfg, ds):
    m = cfg["model"]
    kwargs = {}
    if m["widths"]:
        kwargs["widths"] = m["widths"]
    if m["dropout"]:
        kwargs["dropout"] = m["dropout"]
    return ModelSpec(m["kind"], ds.input_shape, ds.n_classes, seed=m["seed"], **kwargs)


def train_config(cfg):
    t = cfg["train"]
    return TrainConfig(k=t["k"], lam=t["lambda"], epochs=t["epochs"],
                       batch_size=t["batch_size"], lr=t["lr"], optimizer=t["optimizer"], seed=t["seed"],
                       mode=t["mode"], sort_by=t["sort_by"], mask=t["mask"],
                       mask_value=t["mask_value"] if t["mask_value"] is not None else 0.0,
                       mask_grouping=t["mask_grouping"], checkpoint_in=t["checkpoint_in"])


def method_params(cfg):
    e = cfg["eval"]
    return {"integrated_gradients": {"steps": e["steps"]},
            "smoothgrad": {"sigma": e["sigma"], "n": e["samples"]},
            "gradient_shap": {"n": e["samples"]}}


def _explicit_train_overrides(cfg):
    keys = {"k": "k", "lambda": "lam", "lr": "lr", "epochs": "epochs", "batch_size": "batch_size",
            "optimizer": "optimizer", "sort_by": "sort_by", "mask": "mask", "mask_grouping": "mask_grouping"}
    return {dst: cfg.get("train", src) for src, dst in keys.items() if ("train", src) in cfg.explicit}


def write_saliency_dump(path, scores, targets, method, start=0):
    with open(path, "a" if start else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not start:
            w.writerow(("sample_id", "target", "method", "flat_index", "score"))
        for i, (s, t) in enumerate(zip(scores, targets)):
            for j, v in enumerate(np.asarray(s).ravel().tolist()):
                w.writerow((i, int(t), method, j, repr(v)))


def read_saliency_dump(path):
    """``{method: (targets, scores[n, n_features])}`` from a saliency-dump CSV."""
    acc = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            acc.setdefault(r["method"], {}).setdefault(int(r["sample_id"]), [int(r["target"]), []])[1].append(
                (int(r["flat_index"]), float(r["score"])))
    out = {}
    for method, samples in acc.items():
        ids = sorted(samples)
        targets = np.array([samples[i][0] for i in ids])
        scores = np.array([[v for _, v in sorted(samples[i][1])] for i in ids])
        out[method] = (targets, scores)
    return out


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(cfg, args, say):
    data = cfg["data"]
    if data["kind"] not in dsets.ALL_KINDS:
        raise ConfigError(f"gen-data needs a synthetic data.kind, got {data['kind']!r}",
                          cfg.lines.get(("data", "kind")), cfg.path)
    ds = load_dataset(cfg)
    paths = dsets.export_csv(ds, _out(cfg, f"{data['kind']}_seed{data['seed']}"))
    say(f"wrote {paths['train']} and {paths['test']} (+ masks)")


def cmd_train(cfg, args, say):
    ds = load_dataset(cfg)
    tc = train_config(cfg)
    model = load_checkpoint(tc.checkpoint_in) if tc.checkpoint_in else build_model(model_spec(cfg, ds))
    report, model = train(model, ds, tc)
    ckpt = args.checkpoint_out or _out(cfg, "model.ckpt")
    report.to_csv(_out(cfg, "train_report.csv"))
    save_checkpoint(model, ckpt, model.meta.get("mode"), model.meta.get("epochs"), model.meta.get("rng_state"))
    say(f"test accuracy {report.test_acc[-1]:.4f}; wrote {_out(cfg, 'train_report.csv')} and {ckpt}")


def cmd_saliency(cfg, args, say):
    ds = load_dataset(cfg)
    model = load_checkpoint(args.checkpoint)
    x = ds.x_test[:args.limit]
    targets = ev.attribution_targets(model, x, cfg.get("eval", "target"), ds.y_test[:args.limit])
    path = _out(cfg, "saliency.csv")
    params = method_params(cfg)
    for i, method in enumerate(cfg.get("eval", "methods")):
        scores = ev.saliency_scores(model, x, targets, method, seed=cfg.get("eval", "seeds")[0],
                                    **params.get(method, {}))
        write_saliency_dump(path, scores, targets, method, start=i)
    say(f"wrote {path}")


def cmd_eval_drop(cfg, args, say):
    ds = load_dataset(cfg)
    model = load_checkpoint(args.checkpoint)
    e = cfg["eval"]
    levels = e["levels"] or ev.DROP_LEVELS
    mode = model.meta.get("mode") or "unknown"
    report = ev.MetricReport(notes={"replacement": e["replacement"]})
    targets = ev.attribution_targets(model, ds.x_test, e["target"], ds.y_test)
    params = method_params(cfg)
    for seed in e["seeds"]:
        for method in e["methods"]:
            scores = ev.saliency_scores(model, ds.x_test, targets, method, seed=seed, **params.get(method, {}))
            curve = ev.accuracy_drop_curve(model, ds, scores, levels, e["replacement"], seed=seed)
            curve.to_csv(_out(cfg, f"drop_{mode}_{method}_seed{seed}.csv"))
            report.add(model.spec.kind, method, ds.name, mode, seed, "AUC", curve.summary)
    path = _out(cfg, "drop_metrics.csv")
    report.to_csv(path)
    say(f"wrote {path}")


def cmd_eval_benchmark(cfg, args, say):
    e = cfg["eval"]
    overrides = _explicit_train_overrides(cfg)
    report = ev.benchmark_sweep(e["archs"], e["methods"], e["kinds"], e["modes"], e["seeds"],
                                train_overrides={a: overrides for a in e["archs"]}, target=e["target"],
                                mu=cfg.get("data", "mu"), n_train=cfg.get("data", "n_train"),
                                n_test=cfg.get("data", "n_test"), log=say)
    path = _out(cfg, "benchmark.csv")
    report.to_csv(path)
    say(f"wrote {path}")


def cmd_eval_vanishing(cfg, args, say):
    e = cfg["eval"]
    overrides = _explicit_train_overrides(cfg)
    report = ev.vanishing_saliency_experiment(e["seeds"], e["methods"], e["modes"], overrides,
                                              target=e["target"], mu=cfg.get("data", "mu"),
                                              n_train=cfg.get("data", "n_train"),
                                              n_test=cfg.get("data", "n_test"), log=say)
    path = _out(cfg, "vanishing.csv")
    report.to_csv(path)
    say(f"wrote {path}")


def _sniff(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                return line.strip()
    return ""


def cmd_report(cfg, args, say):
    metric_files, curve_files = [], []
    for p in args.inputs:
        if not os.path.exists(p):
            raise DataError(f"{p}: no such file")
        header = _sniff(p)
        if header == ",".join(ev.REPORT_COLUMNS):
            metric_files.append(p)
        elif header == "level,value":
            curve_files.append(p)
        elif header == ",".join(TrainReport.COLUMNS):
            continue
        else:
            raise FormatError(f"{p}: unrecognized CSV header {header[:60]!r}", offset=0)
    written = []
    if metric_files:
        rep = rp.merge_reports(metric_files)
        rp.write_summary_csv(rep, _out(cfg, "summary.csv"))
        with open(_out(cfg, "summary.txt"), "w", encoding="utf-8") as fh:
            fh.write(rp.format_table(rep))
        written += ["summary.csv", "summary.txt"]
        for metric in sorted({r["metric"] for r in rep.rows}):
            series, kinds = rp.metric_series(rep, metric)
            safe = "".join(c if c.isalnum() else "_" for c in metric).strip("_")
            with open(_out(cfg, f"plot_{safe}.svg"), "w", encoding="utf-8") as fh:
                fh.write(rp.svg_line_plot(series, f"{metric} by dataset", "dataset: " + ", ".join(kinds), metric))
            written.append(f"plot_{safe}.svg")
    if curve_files:
        series = {}
        for p in curve_files:
            c = ev.EvalCurve.from_csv(p)
            series[os.path.splitext(os.path.basename(p))[0]] = (c.levels, c.values)
        with open(_out(cfg, "curves.svg"), "w", encoding="utf-8") as fh:
            fh.write(rp.svg_line_plot(series, "accuracy drop", "fraction of features removed", "test accuracy"))
        written.append("curves.svg")
    say("wrote " + ", ".join(written) if written else "nothing to report")


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "saliency": cmd_saliency, "eval-drop": cmd_eval_drop,
            "eval-benchmark": cmd_eval_benchmark, "eval-vanishing": cmd_eval_vanishing, "report": cmd_report}


def main(argv=None, stdout=None, stderr=None):
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args).validate_paths()
        COMMANDS[args.command](cfg, args, lambda msg: print(msg, file=stdout))
        return 0
    except SystemExit as exc:
        # --help exits 0 through argparse
        return int(exc.code or 0)
    except SGTError as exc:
        print(f"sgtrain: error: {exc}", file=stderr)
        return exc.exit_code
    except (FloatingPointError, OverflowError) as exc:
        print(f"sgtrain: error: numeric failure: {exc}", file=stderr)
        return NumericError.exit_code
    except OSError as exc:
        print(f"sgtrain: error: {exc.strerror or exc}: {exc.filename or ''}".rstrip(": "), file=stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
