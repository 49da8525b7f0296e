"""Metrics, classifier flavors, intersection ensemble and the experiment harnesses."""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from crxguard import forest as F
from crxguard.corpus import Corpus, split_random, split_temporal
from crxguard.errors import EmptySide, IdSetMismatch, InvalidRatio, UnlabeledRecord
from crxguard.feat_meta import FeatureMatrix, build_matrix
from crxguard.feat_src import UnitCache
from crxguard.vocab import FeatureSchema, build_schema

log = logging.getLogger(__name__)

FLAVORS = ("metadata", "source", "combined")
SLICE_KEYS = ("year", "month", "category", "manifest_version", "class")
ATTR_KEYS = ("year", "month", "category", "manifest_version")


# ---------------------------------------------------------------- metrics


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class Confusion:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "Confusion":
        t = np.asarray(y_true, dtype=bool)
        p = np.asarray(y_pred, dtype=bool)
        return cls(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(~t & ~p)), int(np.sum(t & ~p)))

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return _ratio(self.tp + self.tn, self.total)

    @property
    def tpr(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def tnr(self) -> float:
        return _ratio(self.tn, self.tn + self.fp)

    @property
    def fpr(self) -> float:
        return _ratio(self.fp, self.tn + self.fp)

    @property
    def fnr(self) -> float:
        return _ratio(self.fn, self.tp + self.fn)

    @property
    def fdr(self) -> float:
        return _ratio(self.fp, self.tp + self.fp)

    @property
    def precision(self) -> float:
        return 1.0 - self.fdr

    def metrics(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in ("accuracy", "tpr", "tnr", "fpr", "fnr", "precision", "fdr")}

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn, **self.metrics()}


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Per-record predictions plus the confusion; slices are derived from per-record attributes."""

    flavor: str
    threshold: float
    ids: tuple[str, ...]
    y_true: np.ndarray  # bool, malicious
    y_pred: np.ndarray  # bool
    proba: np.ndarray  # float; NaN where not applicable (intersection)
    attrs: Mapping[str, tuple] = field(default_factory=dict)

    @property
    def confusion(self) -> Confusion:
        return Confusion.from_predictions(self.y_true, self.y_pred)

    def __getattr__(self, name):
        if name in ("accuracy", "tpr", "tnr", "fpr", "fnr", "precision", "fdr"):
            return getattr(self.confusion, name)
        raise AttributeError(name)

    def slice_confusions(self, key: str) -> dict[object, Confusion]:
        if key not in SLICE_KEYS:
            raise ValueError(f"unknown slice key {key!r}")
        values = self.attrs.get(key) if key != "class" else tuple(
            "malicious" if t else "benign" for t in self.y_true)
        if values is None:
            return {}
        out: dict[object, Confusion] = {}
        for v in sorted(set(values), key=str):
            mask = np.array([x == v for x in values], dtype=bool)
            out[v] = Confusion.from_predictions(self.y_true[mask], self.y_pred[mask])
        return out

    @property
    def slices(self) -> dict[str, Confusion]:
        return {f"{k}={v}": c for k in SLICE_KEYS for v, c in self.slice_confusions(k).items()}

    def rethreshold(self, threshold: float) -> "EvalReport":
        return replace(self, threshold=float(threshold), y_pred=self.proba >= threshold)

    def subset(self, ids: Iterable[str]) -> "EvalReport":
        pos = {rid: i for i, rid in enumerate(self.ids)}
        idx = np.array([pos[r] for r in ids], dtype=np.int64)
        return EvalReport(self.flavor, self.threshold, tuple(self.ids[i] for i in idx), self.y_true[idx],
                          self.y_pred[idx], self.proba[idx],
                          {k: tuple(v[i] for i in idx) for k, v in self.attrs.items()})

    def to_dict(self, with_predictions: bool = False) -> dict:
        out = {"flavor": self.flavor, "threshold": self.threshold, "n": len(self.ids),
               "confusion": self.confusion.to_dict(),
               "slices": {k: c.to_dict() for k, c in self.slices.items()}}
        if with_predictions:
            out["predictions"] = [
                {"id": rid, "label": "malicious" if t else "benign",
                 "predicted": "malicious" if p else "benign",
                 "proba": None if np.isnan(pr) else float(pr),
                 **{k: v[i] for k, v in self.attrs.items()}}
                for i, (rid, t, p, pr) in enumerate(zip(self.ids, self.y_true, self.y_pred, self.proba))]
        return out

    @classmethod
    def from_dict(cls, doc: Mapping) -> "EvalReport":
        """Inverse of ``to_dict(with_predictions=True)``."""
        if "predictions" not in doc:
            raise ValueError("report carries no per-record predictions")
        rows = doc["predictions"]
        attrs = {k: tuple(r.get(k) for r in rows) for k in ATTR_KEYS if rows and k in rows[0]}
        return cls(
            str(doc["flavor"]), float(doc["threshold"]), tuple(r["id"] for r in rows),
            np.array([r["label"] == "malicious" for r in rows], dtype=bool),
            np.array([r["predicted"] == "malicious" for r in rows], dtype=bool),
            np.array([np.nan if r["proba"] is None else r["proba"] for r in rows], dtype=np.float64),
            attrs,
        )

    def to_json(self, with_predictions: bool = False) -> str:
        return json.dumps(self.to_dict(with_predictions), indent=1, sort_keys=True)


def record_attrs(corpus: Corpus, ids: Sequence[str]) -> dict[str, tuple]:
    by_id = {r.id: r for r in corpus}
    recs = [by_id[i] for i in ids]
    return {
        "year": tuple(r.year for r in recs),
        "month": tuple(f"{r.last_update:%Y-%m}" if r.last_update else None for r in recs),
        "category": tuple(r.category for r in recs),
        "manifest_version": tuple(r.manifest_version for r in recs),
    }


# ---------------------------------------------------------------- flavors / fitting


@dataclass
class FeatureContext:
    """A frozen schema with cached unit sequences and matrices for one experiment."""

    schema: FeatureSchema
    units: UnitCache
    _matrices: dict = field(default_factory=dict)

    @classmethod
    def from_training(cls, train: Corpus, units: UnitCache | None = None) -> "FeatureContext":
        units = units if units is not None else UnitCache()
        return cls(build_schema(train, units), units)

    def matrix(self, corpus: Corpus) -> FeatureMatrix:
        key = tuple(corpus.ids)
        fm = self._matrices.get(key)
        if fm is None:
            fm = build_matrix(corpus, self.schema, self.units)
            self._matrices[key] = fm
        return fm

    def flavor_matrix(self, corpus: Corpus, flavor: str) -> FeatureMatrix:
        return self.matrix(corpus).flavor(self.schema, flavor)


def _require_labels(corpus_or_labels) -> None:
    labels = corpus_or_labels.labels if hasattr(corpus_or_labels, "labels") else corpus_or_labels
    bad = [i for i, lab in enumerate(labels) if lab not in ("benign", "malicious")]
    if bad:
        raise UnlabeledRecord(f"{len(bad)} records lack a benign/malicious label")


def fit_flavor(ctx: FeatureContext, train: Corpus, flavor: str, config: F.TrainConfig,
               folds: int = 5, seed: int | None = None) -> tuple[F.CalibratedModel, float]:
    """Calibrate + train one flavor; returns the model and its pooled cross-validation accuracy."""
    _require_labels(train)
    fm = ctx.flavor_matrix(train, flavor)
    seed = config.seed if seed is None else seed
    fv = F.cross_val_votes(fm.X, fm.y, config, folds, seed)
    threshold, record = F.threshold_from_folds(fv, fm.y)
    cv_acc = F.cross_val_accuracy(fv, fm.y, threshold)
    forest = F.train(fm.X, fm.y, config, ctx.schema.flavor_digest(flavor))
    return F.CalibratedModel(forest, threshold, replace(record, seed=seed), flavor), cv_acc


def evaluate(model: F.CalibratedModel, corpus: Corpus, ctx: FeatureContext, flavor: str | None = None) -> EvalReport:
    flavor = flavor or model.flavor
    _require_labels(corpus)
    fm = ctx.flavor_matrix(corpus, flavor)
    if model.forest.schema_digest and model.forest.schema_digest != fm.schema_digest:
        from crxguard.errors import SchemaMismatch

        raise SchemaMismatch("model and feature matrix disagree on schema or flavor")
    proba = F.votes(model.forest, fm.X) / model.forest.n_trees if len(fm) else np.zeros(0)
    y_true = fm.y.astype(bool)
    return EvalReport(flavor, model.threshold, fm.ids, y_true, proba >= model.threshold, proba,
                      record_attrs(corpus, fm.ids))


# ---------------------------------------------------------------- intersection


def ensemble_intersection(reports: Mapping[str, EvalReport]) -> EvalReport:
    """Malicious iff every flavor flags it, over ids that carry source features."""
    missing = set(FLAVORS) - set(reports)
    if missing:
        raise IdSetMismatch(f"missing flavors: {sorted(missing)}")
    src, comb, meta = (set(reports[f].ids) for f in ("source", "combined", "metadata"))
    if src != comb or not src <= meta:
        raise IdSetMismatch("flavor reports do not cover a shared id set")
    universe = [rid for rid in reports["combined"].ids]
    subs = [reports[f].subset(universe) for f in FLAVORS]
    y_true = subs[0].y_true
    for s in subs[1:]:
        if not np.array_equal(s.y_true, y_true):
            raise IdSetMismatch("flavor reports disagree on labels")
    pred = np.logical_and.reduce([s.y_pred for s in subs]) if universe else np.zeros(0, dtype=bool)
    return EvalReport("intersection", float("nan"), tuple(universe), y_true, pred,
                      np.full(len(universe), np.nan), subs[2].attrs)


# ---------------------------------------------------------------- longitudinal


@dataclass(frozen=True)
class YearResult:
    year: int
    report: EvalReport
    threshold: float
    cv_accuracy: float
    n_train: int
    n_test: int
    importance: tuple[tuple[str, float], ...]
    # the fitted pieces, so follow-up experiments on the same split can reuse them
    model: F.CalibratedModel | None = field(default=None, repr=False, compare=False)
    context: FeatureContext | None = field(default=None, repr=False, compare=False)

    def row(self) -> dict:
        c = self.report.confusion
        return {"year": self.year, "n_train": self.n_train, "n_test": self.n_test,
                "threshold": self.threshold, "cv_accuracy": self.cv_accuracy, **c.to_dict()}


def assert_no_leak(train: Corpus, year: int) -> None:
    cutoff = dt.date(year, 1, 1)
    late = [r.id for r in train if r.last_update >= cutoff]
    if late:
        raise AssertionError(f"training side for {year} contains {len(late)} records dated on/after the cutoff")


def longitudinal(corpus: Corpus, years: Sequence[int], config: F.TrainConfig, flavor: str = "combined",
                 folds: int = 5, top_k: int = 10, fixed_threshold: float | None = None,
                 units: UnitCache | None = None, keep_last: bool = False) -> list[YearResult]:
    """Per year Y: train on records before Y (vocabularies rebuilt), test on Y.

    The threshold is calibrated once per training side unless ``fixed_threshold`` is given.
    ``keep_last`` retains the final year's model and feature context on its result.
    """
    units = units if units is not None else UnitCache()
    out = []
    for year in years:
        try:
            train, test = split_temporal(corpus, year)
        except EmptySide as exc:
            log.warning("skipping %s: %s", year, exc)
            continue
        assert_no_leak(train, year)
        ctx = FeatureContext.from_training(train, units)
        model, cv_acc = fit_flavor(ctx, train, flavor, config)
        if fixed_threshold is not None:
            model = model.with_threshold(fixed_threshold)
        report = evaluate(model, test, ctx)
        names = ctx.schema.feature_names()[ctx.schema.flavor_slice(flavor)]
        imp = tuple((names[i], v) for i, v in F.feature_importance(model.forest)[:top_k])
        last = keep_last and year == years[-1]
        out.append(YearResult(year, report, model.threshold, cv_acc, len(train), len(test), imp,
                              model if last else None, ctx if last else None))
        log.info("year %s: acc=%.4f tpr=%.4f fpr=%.4f", year, report.accuracy, report.tpr, report.fpr)
    return out


@dataclass(frozen=True)
class DriftCheck:
    year: int
    fnr_before: float
    fnr_in: float
    n_before: int
    n_in: int

    def rows(self) -> list[dict]:
        return [{"period": f"before {self.year}", "malicious": self.n_before, "fnr": self.fnr_before},
                {"period": f"in {self.year}", "malicious": self.n_in, "fnr": self.fnr_in}]


def drift_fnr_check(corpus: Corpus, year: int, config: F.TrainConfig, flavor: str = "combined",
                    ratio: float = 0.8, seed: int = 0, units: UnitCache | None = None) -> DriftCheck:
    """Train on a random split of pre-``year`` records; compare malicious FNR before vs. in ``year``."""
    before = corpus.filter(lambda r: r.last_update.year < year)
    during = corpus.filter(lambda r: r.last_update.year == year)
    if not len(before) or not len(during):
        raise EmptySide(f"need records both before and in {year}")
    train, test_before = split_random(before, ratio, seed)
    ctx = FeatureContext.from_training(train, units)
    model, _ = fit_flavor(ctx, train, flavor, config)
    rep_before = evaluate(model, test_before, ctx)
    rep_in = evaluate(model, during.derive(during.records, "test"), ctx)
    cb, ci = rep_before.confusion, rep_in.confusion
    if cb.tp + cb.fn == 0 or ci.tp + ci.fn == 0:
        raise EmptySide("no malicious records on one side of the cutoff")
    return DriftCheck(year, cb.fnr, ci.fnr, cb.tp + cb.fn, ci.tp + ci.fn)


# ---------------------------------------------------------------- sub-sampling / thresholds


@dataclass(frozen=True)
class SubsampleRow:
    fraction: float
    mean: dict[str, float]
    sd: dict[str, float]
    runs: tuple[dict[str, float], ...]

    def row(self) -> dict:
        out = {"fraction": self.fraction}
        for k in self.mean:
            out[f"{k}_mean"] = self.mean[k]
            out[f"{k}_sd"] = self.sd[k]
        return out


SUBSAMPLE_METRICS = ("accuracy", "fpr", "precision", "tpr")


def subsample_experiment(train: Corpus, test: Corpus, config: F.TrainConfig,
                         fractions: Sequence[float] = (0.1, 0.2, 0.4, 0.8), repeats: int = 5, seed: int = 0,
                         threshold: float | None = None, ctx: FeatureContext | None = None,
                         flavor: str = "combined") -> list[SubsampleRow]:
    """Retrain on a fraction of the benign training records (malicious side kept whole).

    The decision threshold stays fixed across fractions: by default it is
    calibrated once on the full training side.
    """
    for f in fractions:
        if not 0.0 < f < 1.0:
            raise InvalidRatio(f"fractions must lie strictly between 0 and 1, got {f}")
    ctx = ctx or FeatureContext.from_training(train)
    fm_train = ctx.flavor_matrix(train, flavor)
    fm_test = ctx.flavor_matrix(test, flavor)
    if threshold is None:
        threshold, _ = F.calibrate_threshold(fm_train.X, fm_train.y, config, seed=config.seed)
    y = fm_train.y
    benign = np.flatnonzero(y == 0)
    malicious = np.flatnonzero(y == 1)
    out = []
    for fi, frac in enumerate(fractions):
        runs = []
        for r in range(repeats):
            rng = np.random.default_rng([seed, fi, r])
            keep = rng.choice(benign, size=max(1, int(round(frac * len(benign)))), replace=False)
            idx = np.sort(np.concatenate([keep, malicious]))
            forest = F.train(fm_train.X[idx], y[idx], replace(config, seed=config.seed + 1000 * fi + r))
            proba = F.votes(forest, fm_test.X) / forest.n_trees
            c = Confusion.from_predictions(fm_test.y == 1, proba >= threshold)
            runs.append({k: getattr(c, k) for k in SUBSAMPLE_METRICS})
        mean = {k: float(np.mean([x[k] for x in runs])) for k in SUBSAMPLE_METRICS}
        sd = {k: float(np.std([x[k] for x in runs])) for k in SUBSAMPLE_METRICS}
        out.append(SubsampleRow(frac, mean, sd, tuple(runs)))
    return out


def fpr_threshold_experiment(report: EvalReport, threshold_override: float) -> EvalReport:
    """Re-apply a different threshold to stored probabilities (no retraining)."""
    return report.rethreshold(threshold_override)


def threshold_sweep(report: EvalReport, n_trees: int) -> list[dict]:
    """Rates at every achievable vote fraction (threshold -> rate series)."""
    rows = []
    for k in range(n_trees + 1):
        c = report.rethreshold(k / n_trees).confusion
        rows.append({"threshold": k / n_trees, "tpr": c.tpr, "fpr": c.fpr, "tnr": c.tnr,
                     "fnr": c.fnr, "j": c.tpr - c.fpr})
    return rows


def locate_fpr_cut(report: EvalReport, n_trees: int, factor: float = 10.0,
                   max_tpr_cost: float = 0.10) -> dict | None:
    """Lowest threshold above the report's own whose FPR is at most base/``factor``
    while TPR drops by at most ``max_tpr_cost``; ``None`` if no such threshold exists."""
    base = report.confusion
    for k in range(n_trees + 1):
        t = k / n_trees
        if t <= report.threshold:
            continue
        c = report.rethreshold(t).confusion
        if c.fpr * factor <= base.fpr and base.tpr - c.tpr <= max_tpr_cost:
            return {"threshold": t, "base_fpr": base.fpr, "base_tpr": base.tpr, "fpr": c.fpr, "tpr": c.tpr}
    return None


def slice_report(report: EvalReport, key: str) -> list[dict]:
    """Accuracy and totals per (slice value, class)."""
    values = report.attrs.get(key) if key != "class" else tuple(
        "malicious" if t else "benign" for t in report.y_true)
    if values is None:
        raise ValueError(f"report has no {key!r} attribute")
    rows = []
    for v in sorted(set(values), key=str):
        for cls, flag in (("benign", False), ("malicious", True)):
            mask = np.array([x == v for x in values]) & (report.y_true == flag)
            n = int(mask.sum())
            if n:
                correct = int(np.sum(report.y_pred[mask] == report.y_true[mask]))
                rows.append({key: v, "class": cls, "total": n, "correct": correct, "accuracy": correct / n})
    return rows


# ---------------------------------------------------------------- output


def rows_to_csv(rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    columns = list(columns or rows[0].keys())
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})
    return buf.getvalue()


def write_series(path: str | Path, x_name: str, y_name: str, points: Iterable[tuple]) -> None:
    """Two-column plot-data file."""
    rows = [{x_name: x, y_name: y} for x, y in points]
    Path(path).write_text(rows_to_csv(rows, [x_name, y_name]) or f"{x_name},{y_name}\n", "utf-8")
