"""Interpretability metrics and the experiment drivers built on them.

Feature rankings for evaluation sort by ``|saliency|`` descending. Ties at
a selection cutoff are resolved in expectation: every tied feature is
selected with equal probability, which is what averaging over all tie
orders gives and keeps the metrics independent of index order.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import saliency as sal
from .datasets import ALL_KINDS, generate
from .errors import ConfigError, DataError, ParameterError, ProvenanceError
from .models import ModelSpec, build_model
from .training import TrainConfig, accuracy, fraction_count, train

DROP_LEVELS = tuple(round(0.1 * i, 1) for i in range(11))
PR_LEVELS = tuple(round(0.1 * i, 1) for i in range(1, 11))
AOPC_BINS = (0.01, 0.05, 0.1, 0.2, 0.5)
REPLACEMENTS = ("dataset_background", "mean_value", "mask_strategy")

# masked-feature fractions used per dataset in the published time-series runs
BENCHMARK_K = {
    "tcn": {"middle": 0.5, "small_middle": 0.4, "moving_middle": 0.7, "moving_small_middle": 0.8,
            "rare_time": 0.5, "moving_rare_time": 0.5, "rare_features": 0.3,
            "moving_rare_features": 0.05, "positional_time": 0.7, "positional_feature": 0.1},
    "lstm": {"middle": 0.3, "small_middle": 0.6, "moving_middle": 0.6, "moving_small_middle": 0.05,
             "rare_time": 0.3, "moving_rare_time": 0.5, "rare_features": 0.3,
             "moving_rare_features": 0.1, "positional_time": 0.3, "positional_feature": 0.02},
}


def trapezoid(levels, values):
    levels = np.asarray(levels, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    return float(np.sum((levels[1:] - levels[:-1]) * (values[1:] + values[:-1]) / 2.0))


@dataclass
class EvalCurve:
    levels: tuple
    values: tuple
    summary: float = None
    name: str = ""

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=np.float64)
        if lv.ndim != 1 or np.any(np.diff(lv) <= 0) or lv.min(initial=0) < 0 or lv.max(initial=0) > 1:
            raise ParameterError("curve levels must be strictly ascending within [0, 1]")
        self.levels = tuple(float(v) for v in lv)
        self.values = tuple(float(v) for v in self.values)
        if len(self.values) != len(self.levels):
            raise ParameterError("one value per level is required")
        if self.summary is None:
            self.summary = trapezoid(self.levels, self.values)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("level", "value"))
            for lv, v in zip(self.levels, self.values):
                w.writerow((repr(lv), repr(v)))

    @classmethod
    def from_csv(cls, path, name=""):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
        return cls(tuple(float(r["level"]) for r in rows), tuple(float(r["value"]) for r in rows), name=name)


# -- selection helpers --------------------------------------------------------

def _flat(a):
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(len(a), -1)


def selection_probabilities(scores, count):
    """Probability that each feature is among the ``count`` highest scores, ties split evenly."""
    scores = np.asarray(scores, dtype=np.float64)
    single = scores.ndim == 1
    s = scores[None] if single else scores
    out = np.zeros_like(s)
    if count > 0:
        srt = -np.sort(-s, axis=1)
        cut = srt[:, count - 1:count]
        above = s > cut
        tied = s == cut
        remaining = count - above.sum(axis=1, keepdims=True)
        out = above + tied * (remaining / tied.sum(axis=1, keepdims=True))
    return out[0] if single else out


def top_indices(scores, count):
    """Deterministic top-``count`` indices per row (descending, ties by ascending index)."""
    order = np.argsort(-np.asarray(scores), axis=1, kind="stable")
    return order[:, :count]


# -- accuracy drop ------------------------------------------------------------

def _replacement_values(dataset, replacement, shape, rng):
    if replacement == "dataset_background":
        bg = dataset.background
        if bg is None:
            raise ConfigError(f"dataset {dataset.name!r} records no background; choose another replacement")
        if bg == "standard_normal":
            return rng.standard_normal(shape)
        return np.full(shape, float(bg))
    if replacement == "mean_value":
        return np.full(shape, float(dataset.x_train.mean()))
    if replacement == "mask_strategy":
        lo, hi = dataset.feature_ranges()
        lo = np.broadcast_to(lo, shape[1:])
        hi = np.broadcast_to(hi, shape[1:])
        return lo + (hi - lo) * rng.random(shape)
    raise ConfigError(f"unknown replacement {replacement!r}; expected one of {REPLACEMENTS}")


def accuracy_drop_curve(model, dataset, saliency_scores, levels=DROP_LEVELS, replacement="dataset_background",
                        seed=0, use_abs=True, name=""):
    """Test accuracy after replacing the top ``level`` fraction of features by saliency.

    Removal is nested across levels and the replacement values are drawn once,
    so each level extends the previous one.
    """
    levels = tuple(levels)
    if any(not 0 <= lv <= 1 for lv in levels):
        raise ParameterError("levels must lie in [0, 1]")
    x = np.asarray(dataset.x_test, dtype=np.float64)
    scores = _flat(saliency_scores)
    if use_abs:
        scores = np.abs(scores)
    n_feat = scores.shape[1]
    rng = np.random.default_rng(seed)
    fill = _replacement_values(dataset, replacement, x.shape, rng).reshape(len(x), -1)
    order = np.argsort(-scores, axis=1, kind="stable")
    values = []
    for lv in levels:
        m = fraction_count(lv, n_feat)
        if m == 0:
            values.append(accuracy(model, x, dataset.y_test))
            continue
        xm = x.reshape(len(x), -1).copy()
        idx = order[:, :m]
        np.put_along_axis(xm, idx, np.take_along_axis(fill, idx, axis=1), axis=1)
        values.append(accuracy(model, xm.reshape(x.shape), dataset.y_test))
    return EvalCurve(levels, values, name=name)


# -- precision / recall -------------------------------------------------------

def precision_recall_at(scores, truth, count, weighted=True):
    """Expected (precision, recall) per sample when the top ``count`` features are selected.

    Weighted variants give each selected feature the weight
    ``|saliency| / sum(selected |saliency|)`` for precision, and measure recall
    as the share of the informative features' saliency mass that was captured.
    A zero-mass denominator falls back to the unweighted count ratio.
    """
    w = np.abs(_flat(scores))
    g = _flat(truth).astype(np.float64)
    informative = g.sum(axis=1)
    if np.any(informative == 0):
        raise DataError("every sample needs at least one informative ground-truth feature")
    pi = selection_probabilities(w, count)
    hits = (pi * g).sum(axis=1)
    prec_u = hits / count if count else np.zeros(len(w))
    rec_u = hits / informative
    if not weighted:
        return prec_u, rec_u
    sel_mass = (pi * w).sum(axis=1)
    hit_mass = (pi * w * g).sum(axis=1)
    inf_mass = (w * g).sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(sel_mass > 0, hit_mass / np.where(sel_mass > 0, sel_mass, 1), prec_u)
        rec = np.where(inf_mass > 0, hit_mass / np.where(inf_mass > 0, inf_mass, 1), rec_u)
    return prec, rec


def precision_recall_curve(saliency_maps, masks, levels=PR_LEVELS, weighted=True):
    """Mean precision/recall over samples at each level plus their trapezoidal areas."""
    levels = tuple(levels)
    if any(not 0 < lv <= 1 for lv in levels):
        raise ParameterError("precision/recall levels must lie in (0, 1]")
    if masks is None:
        raise DataError("precision/recall needs ground-truth masks")
    scores = _flat(saliency_maps)
    truth = _flat(masks)
    if scores.shape != truth.shape:
        raise DataError("saliency maps and masks differ in shape")
    n_feat = scores.shape[1]
    prec, rec = [], []
    for lv in levels:
        p, r = precision_recall_at(scores, truth, fraction_count(lv, n_feat), weighted)
        prec.append(float(p.mean()))
        rec.append(float(r.mean()))
    pc = EvalCurve(levels, prec, name="precision")
    rc = EvalCurve(levels, rec, name="recall")
    return {"AUP": pc.summary, "AUR": rc.summary, "precision": pc, "recall": rc}


# -- difference metrics -------------------------------------------------------

@dataclass(frozen=True)
class MetricValue:
    value: float
    model_id: str
    seed: int
    method: str = ""


def diff_metrics(method_value, baseline_value):
    """Metric under a saliency method minus the same metric under random scores, same model and seed."""
    if isinstance(method_value, MetricValue) or isinstance(baseline_value, MetricValue):
        if not (isinstance(method_value, MetricValue) and isinstance(baseline_value, MetricValue)):
            raise ProvenanceError("both values need provenance to be compared")
        if method_value.model_id != baseline_value.model_id or method_value.seed != baseline_value.seed:
            raise ProvenanceError(
                f"values come from different runs: model {method_value.model_id}/seed {method_value.seed} "
                f"vs model {baseline_value.model_id}/seed {baseline_value.seed}")
        return float(method_value.value - baseline_value.value)
    return float(method_value - baseline_value)


# -- comprehensiveness / sufficiency -----------------------------------------

def comprehensiveness_sufficiency(model, x, saliency_scores, bins=AOPC_BINS, background=0.0, seed=0,
                                  use_abs=True):
    """AOPC of comprehensiveness and sufficiency over rationale bins plus the empty bin.

    ``background`` is the fill for removed features: a constant, an array
    shaped like ``x`` or ``"standard_normal"``.
    """
    bins = tuple(bins)
    if any(not 0 < b <= 1 for b in bins):
        raise ParameterError("rationale bins must lie in (0, 1]")
    x = np.asarray(x, dtype=np.float64)
    single = x.shape == model.spec.input_shape
    if single:
        x = x[None]
        saliency_scores = np.asarray(saliency_scores)[None]
    flat = x.reshape(len(x), -1)
    scores = _flat(saliency_scores)
    if use_abs:
        scores = np.abs(scores)
    if isinstance(background, str):
        if background != "standard_normal":
            raise ParameterError(f"unknown background {background!r}")
        fill = np.random.default_rng(seed).standard_normal(flat.shape)
    else:
        fill = np.broadcast_to(np.asarray(background, dtype=np.float64), x.shape).reshape(flat.shape)
    probs = sal.ad.softmax(model.predict(x))
    j = probs.argmax(axis=1)
    rows = np.arange(len(x))
    base = probs[rows, j]
    comp_bins, suff_bins = [], []
    n_feat = flat.shape[1]
    for b in bins:
        m = fraction_count(b, n_feat)
        keep = np.zeros_like(flat, dtype=bool)
        np.put_along_axis(keep, top_indices(scores, m), True, axis=1)
        removed = np.where(keep, fill, flat).reshape(x.shape)
        only = np.where(keep, flat, fill).reshape(x.shape)
        comp_bins.append(base - sal.ad.softmax(model.predict(removed))[rows, j])
        suff_bins.append(base - sal.ad.softmax(model.predict(only))[rows, j])
    denom = len(bins) + 1
    comp = np.sum(comp_bins, axis=0) / denom
    suff = np.sum(suff_bins, axis=0) / denom
    return {"comprehensiveness": float(comp.mean()), "sufficiency": float(suff.mean()),
            "comprehensiveness_per_sample": comp, "sufficiency_per_sample": suff,
            "comprehensiveness_bins": [float(c.mean()) for c in comp_bins],
            "sufficiency_bins": [float(s.mean()) for s in suff_bins]}


# -- reports ------------------------------------------------------------------

REPORT_COLUMNS = ("arch", "method", "kind", "mode", "seed", "metric", "value")


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def add(self, arch, method, kind, mode, seed, metric, value):
        self.rows.append({"arch": arch, "method": method, "kind": kind, "mode": mode, "seed": int(seed),
                          "metric": metric, "value": float(value)})

    def extend(self, other):
        self.rows.extend(other.rows)
        self.notes.update(other.notes)
        return self

    def select(self, **where):
        return [r for r in self.rows if all(r[k] == v for k, v in where.items())]

    def values(self, **where):
        return np.array([r["value"] for r in self.select(**where)], dtype=np.float64)

    def mean(self, **where):
        v = self.values(**where)
        return float(v.mean()) if v.size else float("nan")

    def stderr(self, **where):
        v = self.values(**where)
        return float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0

    def seeds(self):
        return sorted({r["seed"] for r in self.rows})

    def summary(self):
        """Mean and standard error per (arch, method, kind, mode, metric), sorted."""
        groups = {}
        for r in self.rows:
            key = (r["arch"], r["method"], r["kind"], r["mode"], r["metric"])
            groups.setdefault(key, []).append(r["value"])
        out = []
        for key in sorted(groups):
            v = np.array(groups[key])
            se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
            out.append(dict(zip(("arch", "method", "kind", "mode", "metric"), key),
                            n=int(v.size), mean=float(v.mean()), stderr=se))
        return out

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for k in sorted(self.notes):
                fh.write(f"# {k}: {self.notes[k]}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([r["arch"], r["method"], r["kind"], r["mode"], r["seed"], r["metric"], repr(r["value"])])

    @classmethod
    def from_csv(cls, path):
        rep = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            lines = []
            for line in fh:
                if line.startswith("# "):
                    k, _, v = line[2:].rstrip("\n").partition(": ")
                    rep.notes[k] = v
                else:
                    lines.append(line)
        for r in csv.DictReader(lines):
            rep.add(r["arch"], r["method"], r["kind"], r["mode"], int(r["seed"]), r["metric"], float(r["value"]))
        return rep


# -- experiment drivers -------------------------------------------------------

METHOD_DEFAULTS = {
    "gradient": {},
    "integrated_gradients": {"steps": 32},
    "smoothgrad": {"sigma": 0.15, "n": 16},
    "gradient_shap": {"sigma": 0.0, "n": 32},
}

ARCH_DEFAULTS = {
    "tcn": dict(train=dict(epochs=8, batch_size=32, lr=1e-2, optimizer="adam"), model=dict()),
    "lstm": dict(train=dict(epochs=10, batch_size=32, lr=5e-3, optimizer="adam"), model=dict()),
    "mlp": dict(train=dict(epochs=20, batch_size=32, lr=1e-3, optimizer="adam"), model=dict()),
}


def attribution_targets(model, x, target="predicted", labels=None):
    if target == "predicted":
        return model.predict(x).argmax(axis=1)
    if target == "true":
        if labels is None:
            raise ParameterError("true-class targets need labels")
        return np.asarray(labels, dtype=np.int64)
    raise ParameterError(f"target must be 'predicted' or 'true', got {target!r}")


def saliency_scores(model, x, targets, method, seed=0, **params):
    kwargs = dict(METHOD_DEFAULTS.get(method, {}))
    kwargs.update(params)
    if method in ("smoothgrad", "gradient_shap", "random"):
        kwargs["seed"] = seed
    return sal.compute(model, x, targets, method, **kwargs).scores


def evaluate_pr(model, dataset, methods, arch, mode, seed, report, target="predicted", levels=PR_LEVELS,
                method_params=None):
    """Append AUP/AUR (weighted and unweighted) and their Diff against random scores."""
    x = dataset.x_test
    targets = attribution_targets(model, x, target, dataset.y_test)
    model_id = model.fingerprint()
    rand = saliency_scores(model, x, targets, "random", seed=seed)
    base = {wt: precision_recall_curve(rand, dataset.mask_test, levels, weighted=wt) for wt in (True, False)}
    kind = dataset.name
    for wt in (True, False):
        sfx = "" if wt else "_unweighted"
        report.add(arch, "random", kind, mode, seed, "AUP" + sfx, base[wt]["AUP"])
        report.add(arch, "random", kind, mode, seed, "AUR" + sfx, base[wt]["AUR"])
    for method in methods:
        params = (method_params or {}).get(method, {})
        scores = saliency_scores(model, x, targets, method, seed=seed, **params)
        for wt in (True, False):
            sfx = "" if wt else "_unweighted"
            pr = precision_recall_curve(scores, dataset.mask_test, levels, weighted=wt)
            for metric in ("AUP", "AUR"):
                mine = MetricValue(pr[metric], model_id, seed, method)
                ref = MetricValue(base[wt][metric], model_id, seed, "random")
                report.add(arch, method, kind, mode, seed, metric + sfx, pr[metric])
                report.add(arch, method, kind, mode, seed, f"Diff({metric}){sfx}", diff_metrics(mine, ref))
    return report


def _train_config(arch, kind, mode, seed, overrides):
    cfg = dict(ARCH_DEFAULTS.get(arch, ARCH_DEFAULTS["tcn"])["train"])
    cfg["k"] = BENCHMARK_K.get(arch, BENCHMARK_K["tcn"]).get(kind, 0.5)
    cfg["lam"] = 1.0
    cfg.update(overrides or {})
    cfg["mode"] = mode
    cfg["seed"] = seed
    return TrainConfig(**cfg)


def run_cell(arch, kind, mode, seed, train_overrides=None, model_overrides=None, mu=1.0, dataset=None,
             n_train=None, n_test=None):
    """Generate data, build and train one (arch, kind, mode, seed) model."""
    if dataset is None:
        kwargs = {} if n_train is None else {"n_train": n_train, "n_test": n_test or 100}
        dataset = generate(kind, mu, seed, **kwargs)
    spec = ModelSpec(arch, dataset.input_shape, dataset.n_classes, seed=seed, **(model_overrides or {}))
    model = build_model(spec)
    config = _train_config(arch, kind, mode, seed, train_overrides)
    report, model = train(model, dataset, config)
    return dataset, model, report


def benchmark_sweep(architectures=("tcn",), methods=("gradient",), kinds=("middle",),
                    modes=("traditional", "saliency_guided"), seeds=(0,), train_overrides=None,
                    model_overrides=None, target="predicted", mu=1.0, n_train=None, n_test=None, log=None):
    """Cross-product of trainings and attribution metrics; one row per (cell, method, metric)."""
    for k in kinds:
        if k not in ALL_KINDS:
            raise ParameterError(f"unknown dataset kind {k!r}")
    report = MetricReport(notes={
        "weighting": "precision weight |s|/sum(selected |s|); recall = captured informative |s| mass / total",
        "target": target, "baseline": "uniform(0,1) scores redrawn per seed"})
    for arch in architectures:
        for kind in kinds:
            for seed in seeds:
                for mode in modes:
                    ds, model, tr = run_cell(arch, kind, mode, seed, (train_overrides or {}).get(arch),
                                             (model_overrides or {}).get(arch), mu, n_train=n_train, n_test=n_test)
                    report.add(arch, "none", kind, mode, seed, "test_acc", tr.test_acc[-1])
                    evaluate_pr(model, ds, methods, arch, mode, seed, report, target)
                    if log is not None:
                        log(f"{arch}/{kind}/{mode}/seed{seed}: acc={tr.test_acc[-1]:.3f}")
    return report


def vanishing_saliency_experiment(seeds=(0, 1, 2, 3, 4), methods=("gradient",),
                                  modes=("traditional", "saliency_guided"), train_overrides=None,
                                  model_overrides=None, k=0.5, target="predicted", mu=1.0, n_train=None,
                                  n_test=None, log=None):
    """LSTM AUP/AUR for informative boxes early, mid and late in time."""
    overrides = dict(train_overrides or {})
    overrides.setdefault("k", k)
    report = MetricReport(notes={"experiment": "vanishing saliency", "target": target})
    for kind in ("box_early", "box_middle", "box_late"):
        for seed in seeds:
            for mode in modes:
                ds, model, tr = run_cell("lstm", kind, mode, seed, overrides, model_overrides, mu,
                                         n_train=n_train, n_test=n_test)
                report.add("lstm", "none", kind, mode, seed, "test_acc", tr.test_acc[-1])
                evaluate_pr(model, ds, methods, "lstm", mode, seed, report, target)
                if log is not None:
                    log(f"lstm/{kind}/{mode}/seed{seed}: acc={tr.test_acc[-1]:.3f}")
    return report
