"""Monthly active learning: uncertainty sampling, a random ablation and a no-retrain baseline.

The feature schema is frozen on the base training side for the whole run;
only the forest is retrained as labelled records are added. The decision
threshold stays fixed unless ``recalibrate`` is set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from crxguard import forest as F
from crxguard.corpus import Corpus, split_monthly, split_temporal
from crxguard.evaluation import EvalReport, FeatureContext, fit_flavor, record_attrs, write_series
from crxguard.feat_src import UnitCache

STRATEGIES = ("uncertainty", "random", "none")


@dataclass(frozen=True)
class ActiveRunConfig:
    year: int
    K: int = 15
    strategy: str = "uncertainty"
    seed: int = 0
    recalibrate: bool = False

    def __post_init__(self) -> None:
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}")


@dataclass(frozen=True)
class ActiveTrace:
    config: ActiveRunConfig
    monthly_reports: tuple[EvalReport, ...]
    cumulative_errors: tuple[int, ...]
    selected_ids: tuple[tuple[str, ...], ...]
    fingerprints: tuple[str, ...]  # model used to evaluate each month
    training_sizes: tuple[int, ...]  # training-set size of that model
    threshold: float = 0.0
    base_training_ids: frozenset[str] = field(default=frozenset(), repr=False)

    def series(self) -> dict[str, list[tuple[int, float]]]:
        months = range(1, len(self.monthly_reports) + 1)
        return {
            "cumulative_errors": list(zip(months, self.cumulative_errors)),
            "precision": [(m, r.precision) for m, r in zip(months, self.monthly_reports)],
            "recall": [(m, r.tpr) for m, r in zip(months, self.monthly_reports)],
        }

    def to_dict(self) -> dict:
        return {
            "config": {"year": self.config.year, "K": self.config.K, "strategy": self.config.strategy,
                       "seed": self.config.seed, "recalibrate": self.config.recalibrate},
            "threshold": self.threshold,
            "months": [
                {"month": m + 1, "n": len(r.ids), "errors": r.confusion.fp + r.confusion.fn,
                 "cumulative_errors": self.cumulative_errors[m], "confusion": r.confusion.to_dict(),
                 "selected": list(self.selected_ids[m]), "training_size": self.training_sizes[m],
                 "model_fingerprint": self.fingerprints[m]}
                for m, r in enumerate(self.monthly_reports)
            ],
        }

    def write(self, out_dir: str | Path, prefix: str = "active") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{prefix}_trace.json").write_text(json.dumps(self.to_dict(), indent=1), "utf-8")
        for name, pts in self.series().items():
            write_series(out / f"{prefix}_{name}.csv", "month", name, pts)


def uncertainty_rank(proba: Sequence[float], threshold: float, ids: Sequence[str]) -> list[int]:
    """Indices by ascending distance to the threshold; ties by id."""
    proba = np.asarray(proba, dtype=np.float64)
    # vote fractions equidistant from the cut differ in the last bits; treat them as ties
    dist = np.round(np.abs(proba - threshold), 12)
    return sorted(range(len(ids)), key=lambda i: (dist[i], ids[i]))


def _month_seed(seed: int, month: int) -> int:
    return int(np.random.SeedSequence([seed, month]).generate_state(1, dtype=np.uint32)[0])


def run_active_loop(corpus: Corpus, config: ActiveRunConfig, train_config: F.TrainConfig,
                    flavor: str = "combined", folds: int = 5, units: UnitCache | None = None,
                    initial: tuple[FeatureContext, F.CalibratedModel] | None = None) -> ActiveTrace:
    """Evaluate month m with a model trained only on data before month m, then add K labels from m.

    ``initial`` lets several strategies share one calibrated base model.
    """
    base, _ = split_temporal(corpus, config.year)
    if initial is None:
        ctx = FeatureContext.from_training(base, units)
        model, _ = fit_flavor(ctx, base, flavor, train_config, folds)
    else:
        ctx, model = initial
    base_fm = ctx.flavor_matrix(base, flavor)
    X_parts = [base_fm.X]
    y_parts = [base_fm.y]
    n_train = len(base_fm)
    months = split_monthly(corpus, config.year)

    reports, cum, selected, prints, sizes = [], [], [], [], []
    errors = 0
    for m, month in enumerate(months, start=1):
        fm = ctx.flavor_matrix(month, flavor)
        if len(fm):
            proba = F.votes(model.forest, fm.X) / model.forest.n_trees
        else:
            proba = np.zeros(0)
        y_true = fm.y.astype(bool)
        report = EvalReport(flavor, model.threshold, fm.ids, y_true, proba >= model.threshold, proba,
                            record_attrs(month, fm.ids))
        reports.append(report)
        errors += report.confusion.fp + report.confusion.fn
        cum.append(errors)
        prints.append(model.forest.train_fingerprint)
        sizes.append(n_train)

        picked: list[int] = []
        if config.strategy != "none" and config.K > 0 and len(fm):
            k = min(config.K, len(fm))
            if config.strategy == "uncertainty":
                picked = uncertainty_rank(proba, model.threshold, fm.ids)[:k]
            else:
                order = np.argsort(np.array(fm.ids), kind="stable")
                rng = np.random.default_rng([config.seed, m])
                picked = [int(order[i]) for i in rng.choice(len(fm), size=k, replace=False)]
        selected.append(tuple(fm.ids[i] for i in picked))
        if picked:
            idx = np.array(sorted(picked))
            X_parts.append(fm.X[idx])
            y_parts.append(fm.y[idx])
            n_train += len(idx)
            if m < len(months):  # nothing left to evaluate after the last month
                X = np.vstack(X_parts)
                y = np.concatenate(y_parts)
                cfg = replace(train_config, seed=_month_seed(config.seed, m))
                threshold = model.threshold
                if config.recalibrate:
                    threshold, _ = F.calibrate_threshold(X, y, cfg, folds, cfg.seed)
                forest = F.train(X, y, cfg, model.forest.schema_digest)
                model = F.CalibratedModel(forest, threshold, model.calibration_record, flavor)

    return ActiveTrace(config, tuple(reports), tuple(cum), tuple(selected), tuple(prints), tuple(sizes),
                       reports[0].threshold if reports else model.threshold, frozenset(base_fm.ids))
