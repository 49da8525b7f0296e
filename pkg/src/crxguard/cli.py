"""``crxguard`` command line: one subcommand per pipeline stage.

Every command reads its inputs from explicit paths, writes its artifacts under
the output directory (``--out-dir``, else ``$CRXGUARD_OUT_DIR``, else
``./crxguard-out``) and prints a JSON summary on stdout. Failures print
``{"error": code, "detail": ...}`` on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml

from crxguard import forest as F
from crxguard.active import STRATEGIES, ActiveRunConfig, run_active_loop
from crxguard.cluster import cluster_flagged
from crxguard.container import load_package, write_warnings
from crxguard.corpus import Corpus, ingest, record_from_sidecar, split_random, split_temporal, write_corpus
from crxguard.errors import ConfigError, CrxGuardError, SchemaMismatch, StageInputMissing
from crxguard.evaluation import (
    FLAVORS,
    SLICE_KEYS,
    EvalReport,
    FeatureContext,
    drift_fnr_check,
    ensemble_intersection,
    evaluate,
    fit_flavor,
    locate_fpr_cut,
    longitudinal,
    rows_to_csv,
    slice_report,
    subsample_experiment,
    threshold_sweep,
)
from crxguard.feat_meta import FeatureMatrix, build_matrix
from crxguard.feat_src import UnitCache
from crxguard.synth import drifted_config, load_config, synthesize
from crxguard.vocab import NGRAM_CAP, TOP_K, FeatureSchema, build_schema

log = logging.getLogger("crxguard")

OUT_ENV = "CRXGUARD_OUT_DIR"
DEFAULT_OUT = "crxguard-out"
SPLIT_FORMAT = "crxguard-split/1"

# keys a --config file may set; each becomes the default of the flag of the same name
CONFIG_KEYS = {
    "out_dir", "workers", "seed", "trees", "folds", "flavor", "threshold", "ratio", "year", "years",
    "K", "strategy", "fractions", "repeats", "min_sim", "top", "top_k", "ngram_cap",
}


# ---------------------------------------------------------------- helpers


def _path(value: str | None, what: str, *, directory: bool = False) -> Path:
    if value is None:
        raise StageInputMissing(f"{what} is required")
    p = Path(value)
    if not (p.is_dir() if directory else p.is_file()):
        raise StageInputMissing(f"{what} not found: {p}")
    return p


def _out_dir(args) -> Path:
    out = Path(args.out_dir or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seed(args) -> int:
    if args.seed is None:
        raise ConfigError(f"'{args.command}' is stochastic: pass --seed or set seed in --config")
    return int(args.seed)


def _train_config(args) -> F.TrainConfig:
    return F.TrainConfig(n_trees=args.trees, seed=_seed(args))


def _write_json(path: Path, doc) -> Path:
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", "utf-8")
    return path


def _write_text(path: Path, text: str) -> Path:
    path.write_text(text, "utf-8")
    return path


def _load_corpus(args, attr: str = "corpus") -> Corpus:
    return ingest(_path(getattr(args, attr), "corpus directory", directory=True), workers=args.workers)


def _load_schema(args) -> FeatureSchema:
    return FeatureSchema.from_json(_path(args.schema, "schema file").read_text("utf-8"))


def _load_model(args, schema: FeatureSchema | None = None) -> F.CalibratedModel:
    model = F.load(_path(args.model, "model file").read_bytes())
    if schema is not None and model.forest.schema_digest != schema.flavor_digest(model.flavor):
        raise SchemaMismatch("model was trained against a different feature schema")
    return model


def _units(corpus: Corpus, workers: int) -> UnitCache:
    units = UnitCache()
    units.prefill((r.pkg for r in corpus), workers)
    return units


def _split_sides(corpus: Corpus, split_path: str | None) -> dict[str, Corpus]:
    """``{"train", "test", "all"}`` views of ``corpus`` according to a split file."""
    sides = {"all": corpus.as_training()}
    if split_path is None:
        return sides
    doc = json.loads(_path(split_path, "split file").read_text("utf-8"))
    if doc.get("format") != SPLIT_FORMAT:
        raise ConfigError(f"{split_path} is not a split file")
    by_id = {r.id: r for r in corpus}
    for side in ("train", "test"):
        missing = [i for i in doc[side] if i not in by_id]
        if missing:
            raise StageInputMissing(f"{len(missing)} {side} ids from the split are absent from the corpus")
        sides[side] = corpus.derive((by_id[i] for i in doc[side]), side)
    return sides


def _side(args, corpus: Corpus) -> Corpus:
    sides = _split_sides(corpus, args.split)
    if args.side not in sides:
        raise ConfigError(f"--side {args.side} needs --split")
    return sides[args.side]


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> dict:
    corpus = _load_corpus(args)
    out = _out_dir(args)
    write_warnings(corpus.warnings, out / "ingest_warnings.jsonl")
    summary = {"records": len(corpus), "class_counts": corpus.class_counts(),
               "warnings": len(corpus.warnings), "ids": corpus.ids}
    _write_json(out / "ingest.json", summary)
    return {k: v for k, v in summary.items() if k != "ids"}


def cmd_synth(args) -> dict:
    seed = _seed(args)
    if args.synth_config:
        config = load_config(_path(args.synth_config, "synthesizer config"))
    elif args.drift:
        config = drifted_config()
    else:
        config = load_config(None)
    if args.scale != 1.0:
        config = replace(config, benign_per_year=max(1, round(config.benign_per_year * args.scale)),
                         malicious_per_year=max(1, round(config.malicious_per_year * args.scale)))
    corpus = synthesize(config, seed)
    out = _out_dir(args)
    write_corpus(corpus, out / "corpus")
    _write_json(out / "synth_config.json", {"seed": seed, "config": config.to_dict()})
    return {"corpus": str(out / "corpus"), "records": len(corpus), "class_counts": corpus.class_counts()}


def cmd_build_vocab(args) -> dict:
    corpus = _load_corpus(args)
    if args.split == "random":
        train, test = split_random(corpus, args.ratio, _seed(args))
    elif args.split == "temporal":
        if args.year is None:
            raise ConfigError("--split temporal needs --year")
        train, test = split_temporal(corpus, args.year)
    else:
        train, test = corpus.as_training(), corpus.derive((), "test")
    schema = build_schema(train, _units(train, args.workers), K=args.top_k, cap=args.ngram_cap)
    out = _out_dir(args)
    _write_text(out / "schema.json", schema.to_json())
    _write_json(out / "split.json", {"format": SPLIT_FORMAT, "kind": args.split, "ratio": args.ratio,
                                     "year": args.year, "seed": args.seed,
                                     "train": train.ids, "test": test.ids})
    return {"schema": str(out / "schema.json"), "split": str(out / "split.json"),
            "schema_digest": schema.schema_digest, "metadata_dim": schema.metadata_dim,
            "source_dim": schema.source_dim, "combined_dim": schema.combined_dim,
            "train": len(train), "test": len(test)}


def cmd_extract(args) -> dict:
    schema = _load_schema(args)
    corpus = _side(args, _load_corpus(args))
    fm = build_matrix(corpus, schema, _units(corpus, args.workers))
    out = _out_dir(args)
    path = out / f"features_{args.side}.npz"
    fm.save(path)
    result = {"matrix": str(path), "rows": len(fm), "columns": int(fm.X.shape[1]),
              "with_source": int(fm.has_source.sum())}
    if args.csv:
        result["csv"] = str(_write_text(out / f"features_{args.side}.csv", fm.to_csv(schema)))
    return result


def _flavor_matrix(args, schema: FeatureSchema) -> FeatureMatrix:
    fm = FeatureMatrix.load(_path(args.matrix, "feature matrix"), schema)
    return fm.flavor(schema, args.flavor)


def cmd_train(args) -> dict:
    schema = _load_schema(args)
    fm = _flavor_matrix(args, schema)
    forest = F.train(fm.X, fm.y, _train_config(args), schema.flavor_digest(args.flavor))
    model = F.CalibratedModel(forest, args.threshold, F.CalibrationRecord(), args.flavor)
    path = _out_dir(args) / f"model_{args.flavor}.bin"
    path.write_bytes(F.save(model))
    return {"model": str(path), "flavor": args.flavor, "n_trees": forest.n_trees, "rows": len(fm),
            "threshold": model.threshold, "train_fingerprint": forest.train_fingerprint}


def cmd_calibrate(args) -> dict:
    schema = _load_schema(args)
    model = _load_model(args, schema)
    args.flavor = model.flavor
    fm = _flavor_matrix(args, schema)
    threshold, record = F.calibrate_threshold(fm.X, fm.y, model.forest.config, args.folds, _seed(args))
    calibrated = F.CalibratedModel(model.forest, threshold, record, model.flavor)
    out = _out_dir(args)
    path = out / f"model_{model.flavor}.calibrated.bin"
    path.write_bytes(F.save(calibrated))
    _write_json(out / f"calibration_{model.flavor}.json",
                {"threshold": threshold, "fold_thresholds": list(record.fold_thresholds),
                 "fold_j": list(record.fold_j), "folds": record.folds, "seed": record.seed})
    return {"model": str(path), "flavor": model.flavor, "threshold": threshold}


def _predict_records(model: F.CalibratedModel, schema: FeatureSchema, corpus: Corpus, workers: int) -> list[dict]:
    fm = build_matrix(corpus, schema, _units(corpus, workers))
    cols = schema.flavor_slice(model.flavor)
    X = np.ascontiguousarray(fm.X[:, cols])
    proba = F.votes(model.forest, X) / model.forest.n_trees
    rows = []
    for i, rid in enumerate(fm.ids):
        if model.flavor != "metadata" and not fm.has_source[i]:
            rows.append({"id": rid, "proba": None, "label": "unscored", "flavor": model.flavor})
            continue
        p = float(proba[i])
        rows.append({"id": rid, "proba": p, "label": "malicious" if p >= model.threshold else "benign",
                     "flavor": model.flavor})
    return rows


def cmd_predict(args) -> dict | list:
    schema = _load_schema(args)
    model = _load_model(args, schema)
    if args.crx:
        data = _path(args.crx, "package file").read_bytes()
        meta = json.loads(_path(args.meta, "sidecar").read_text("utf-8")) if args.meta else {}
        pkg = load_package(data, str(meta.get("id") or Path(args.crx).stem))
        corpus = Corpus((record_from_sidecar(pkg, meta),), "cli")
    else:
        corpus = _load_corpus(args)
    rows = _predict_records(model, schema, corpus, args.workers)
    out = _out_dir(args)
    (out / f"predictions_{model.flavor}.jsonl").write_text(
        "".join(json.dumps(r, sort_keys=True) + "\n" for r in rows), "utf-8")
    return rows[0] if args.crx else {"predictions": str(out / f"predictions_{model.flavor}.jsonl"),
                                     "records": len(rows)}


def _write_report(out: Path, report: EvalReport) -> Path:
    path = _write_text(out / f"report_{report.flavor}.json", report.to_json(with_predictions=True) + "\n")
    for key in SLICE_KEYS:
        if key == "class" or key in report.attrs:
            _write_text(out / f"slices_{report.flavor}_{key}.csv", rows_to_csv(slice_report(report, key)))
    return path


def cmd_evaluate(args) -> dict:
    schema = _load_schema(args)
    model = _load_model(args, schema)
    corpus = _side(args, _load_corpus(args))
    ctx = FeatureContext(schema, _units(corpus, args.workers))
    if args.matrix:
        fm = FeatureMatrix.load(_path(args.matrix, "feature matrix"), schema)
        if fm.ids != tuple(corpus.ids):
            raise ConfigError("feature matrix rows do not match the selected corpus side")
        ctx._matrices[tuple(corpus.ids)] = fm
    report = evaluate(model, corpus, ctx)
    path = _write_report(_out_dir(args), report)
    return {"report": str(path), "flavor": report.flavor, "threshold": report.threshold,
            **report.confusion.to_dict()}


def _read_report(path: str) -> EvalReport:
    return EvalReport.from_dict(json.loads(_path(path, "report").read_text("utf-8")))


def cmd_intersect(args) -> dict:
    reports = {r.flavor: r for r in map(_read_report, args.reports)}
    inter = ensemble_intersection(reports)
    path = _write_report(_out_dir(args), inter)
    return {"report": str(path), **inter.confusion.to_dict(),
            "fp_by_flavor": {f: reports[f].confusion.fp for f in FLAVORS}}


def cmd_longitudinal(args) -> dict:
    corpus = _load_corpus(args)
    results = longitudinal(corpus, args.years, _train_config(args), args.flavor, args.folds,
                           units=_units(corpus, args.workers))
    out = _out_dir(args)
    _write_text(out / "longitudinal.csv", rows_to_csv([r.row() for r in results]))
    mv_rows = [{"year": r.year, **row} for r in results for row in slice_report(r.report, "manifest_version")]
    _write_text(out / "longitudinal_manifest_version.csv", rows_to_csv(mv_rows))
    _write_json(out / "longitudinal_importance.json",
                {str(r.year): [[n, v] for n, v in r.importance] for r in results})
    return {"csv": str(out / "longitudinal.csv"),
            "years": {str(r.year): {"tpr": r.report.tpr, "fpr": r.report.fpr, "cv_accuracy": r.cv_accuracy}
                      for r in results}}


def cmd_drift_check(args) -> dict:
    if args.year is None:
        raise ConfigError("--year is required")
    corpus = _load_corpus(args)
    check = drift_fnr_check(corpus, args.year, _train_config(args), args.flavor, args.ratio, _seed(args),
                            _units(corpus, args.workers))
    out = _out_dir(args)
    _write_text(out / "drift_check.csv", rows_to_csv(check.rows()))
    return {"csv": str(out / "drift_check.csv"), "fnr_before": check.fnr_before, "fnr_in": check.fnr_in}


def cmd_active_learn(args) -> dict:
    if args.year is None:
        raise ConfigError("--year is required")
    corpus = _load_corpus(args)
    tc = _train_config(args)
    units = _units(corpus, args.workers)
    base, _ = split_temporal(corpus, args.year)
    ctx = FeatureContext.from_training(base, units)
    model, _ = fit_flavor(ctx, base, args.flavor, tc, args.folds)
    strategies = STRATEGIES if args.strategy == "all" else (args.strategy,)
    out = _out_dir(args)
    summary = {}
    for strategy in strategies:
        trace = run_active_loop(corpus, ActiveRunConfig(args.year, args.K, strategy, _seed(args)), tc,
                                args.flavor, args.folds, units, initial=(ctx, model))
        trace.write(out, prefix=f"active_{strategy}")
        summary[strategy] = trace.cumulative_errors[-1] if trace.cumulative_errors else 0
    return {"cumulative_errors": summary, "out_dir": str(out)}


def cmd_subsample(args) -> dict:
    corpus = _load_corpus(args)
    sides = _split_sides(corpus, args.split)
    if "test" not in sides:
        raise ConfigError("subsample needs --split with a train/test split")
    train, test = sides["train"], sides["test"]
    ctx = FeatureContext.from_training(train, _units(corpus, args.workers))
    rows = subsample_experiment(train, test, _train_config(args), args.fractions, args.repeats, _seed(args),
                                ctx=ctx, flavor=args.flavor)
    out = _out_dir(args)
    _write_text(out / "subsample.csv", rows_to_csv([r.row() for r in rows]))
    return {"csv": str(out / "subsample.csv"), "fpr_mean": {str(r.fraction): r.mean["fpr"] for r in rows}}


def cmd_cluster(args) -> dict:
    corpus = _load_corpus(args)
    if args.report:
        report = _read_report(args.report)
        flagged = {rid for rid, p in zip(report.ids, report.y_pred) if p}
        records = [r for r in corpus if r.id in flagged]
    else:
        records = list(corpus)
    bundles = {r.id: r.pkg.script_bundle.concatenated_source for r in records if r.pkg.script_bundle}
    clusters = cluster_flagged(bundles, args.min_sim)
    out = _out_dir(args)
    _write_text(out / "clusters.json", clusters.to_json() + "\n")
    return {"clusters": str(out / "clusters.json"), "n_clusters": len(clusters.clusters),
            "clustered": sum(len(c) for c in clusters.clusters), "unclustered": len(clusters.unclustered)}


def cmd_importance(args) -> dict:
    schema = _load_schema(args)
    model = _load_model(args, schema)
    names = schema.feature_names()[schema.flavor_slice(model.flavor)]
    ranked = F.feature_importance(model.forest)
    rows = [{"rank": i + 1, "feature": names[j], "importance": v} for i, (j, v) in enumerate(ranked[:args.top])]
    out = _out_dir(args)
    _write_text(out / f"importance_{model.flavor}.csv", rows_to_csv(rows))
    return {"csv": str(out / f"importance_{model.flavor}.csv"), "top": [[r["feature"], r["importance"]] for r in rows]}


def cmd_report(args) -> dict:
    report = _read_report(args.report)
    out = _out_dir(args)
    sweep = threshold_sweep(report, args.trees)
    _write_text(out / f"threshold_sweep_{report.flavor}.csv", rows_to_csv(sweep))
    cut = locate_fpr_cut(report, args.trees)
    summary = {"flavor": report.flavor, "threshold": report.threshold, **report.confusion.to_dict(),
               "fpr_cut": cut, "slices": {k: c.to_dict() for k, c in report.slices.items()}}
    _write_json(out / f"summary_{report.flavor}.json", summary)
    return {"summary": str(out / f"summary_{report.flavor}.json"),
            "sweep": str(out / f"threshold_sweep_{report.flavor}.csv"), "fpr_cut": cut}


# ---------------------------------------------------------------- parser


def _add(sub, name: str, func: Callable, help_text: str) -> argparse.ArgumentParser:
    p = sub.add_parser(name, help=help_text, description=help_text)
    p.set_defaults(func=func)
    return p


def _seed_arg(p) -> None:
    p.add_argument("--seed", type=int, help="random seed (required unless set in --config)")


def _trees_arg(p) -> None:
    p.add_argument("--trees", type=int, default=300, help="trees per forest (default 300)")
    p.add_argument("--folds", type=int, default=5, help="calibration folds (default 5)")


def _flavor_arg(p, default: str = "combined") -> None:
    p.add_argument("--flavor", choices=FLAVORS, default=default)


def _split_args(p) -> None:
    p.add_argument("--split", help="split file written by build-vocab")
    p.add_argument("--side", choices=("train", "test", "all"), default="all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crxguard", description=__doc__.splitlines()[0])
    parser.add_argument("--out-dir", help=f"output directory (env {OUT_ENV}; default ./{DEFAULT_OUT})")
    parser.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="processes for per-extension work (default: CPU count)")
    parser.add_argument("--config", help="YAML file whose keys set flag defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = _add(sub, "ingest", cmd_ingest, "Load an extension directory tree and report what is usable.")
    p.add_argument("corpus")

    p = _add(sub, "synth", cmd_synth, "Write a seeded synthetic corpus in the ingestible layout.")
    _seed_arg(p)
    p.add_argument("--synth-config", help="synthesizer YAML (default: the shipped drift-free config)")
    p.add_argument("--drift", action="store_true", help="use the drift preset instead of the default")
    p.add_argument("--scale", type=float, default=1.0, help="multiply per-year record counts")

    p = _add(sub, "build-vocab", cmd_build_vocab, "Split a corpus and freeze the feature schema on its training side.")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("random", "temporal", "none"), default="random")
    p.add_argument("--ratio", type=float, default=0.8)
    p.add_argument("--year", type=int)
    p.add_argument("--top-k", type=int, default=TOP_K)
    p.add_argument("--ngram-cap", type=int, default=NGRAM_CAP)
    _seed_arg(p)

    p = _add(sub, "extract", cmd_extract, "Build the combined-layout feature matrix for a corpus side.")
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema", required=True)
    _split_args(p)
    p.add_argument("--csv", action="store_true", help="also write the matrix as CSV")

    p = _add(sub, "train", cmd_train, "Train a forest for one flavor (threshold uncalibrated).")
    p.add_argument("--matrix", required=True)
    p.add_argument("--schema", required=True)
    _flavor_arg(p)
    p.add_argument("--trees", type=int, default=300)
    p.add_argument("--threshold", type=float, default=0.5)
    _seed_arg(p)

    p = _add(sub, "calibrate", cmd_calibrate, "Pick the decision threshold by cross-validated Youden's J.")
    p.add_argument("--model", required=True)
    p.add_argument("--matrix", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--folds", type=int, default=5)
    _seed_arg(p)

    p = _add(sub, "predict", cmd_predict, "Score one package (--crx) or a corpus directory.")
    p.add_argument("--model", required=True)
    p.add_argument("--schema", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--crx", help="a .crx or .zip package")
    src.add_argument("--corpus", help="an extension directory tree")
    p.add_argument("--meta", help="optional meta.json sidecar for --crx")

    p = _add(sub, "evaluate", cmd_evaluate, "Evaluate a model on a labelled corpus side.")
    p.add_argument("--model", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--matrix", help="precomputed matrix for the same side (skips extraction)")
    _split_args(p)

    p = _add(sub, "intersect", cmd_intersect, "Flag only what all three flavor reports flag.")
    p.add_argument("reports", nargs=3, metavar="REPORT")

    p = _add(sub, "longitudinal", cmd_longitudinal, "Train before each year, test on that year.")
    p.add_argument("--corpus", required=True)
    p.add_argument("--years", type=int, nargs="+", required=True)
    _flavor_arg(p)
    _trees_arg(p)
    _seed_arg(p)

    p = _add(sub, "drift-check", cmd_drift_check, "Malicious FNR before vs. within a year.")
    p.add_argument("--corpus", required=True)
    p.add_argument("--year", type=int)
    p.add_argument("--ratio", type=float, default=0.8)
    _flavor_arg(p)
    _trees_arg(p)
    _seed_arg(p)

    p = _add(sub, "active-learn", cmd_active_learn, "Monthly retraining with K labelled records per month.")
    p.add_argument("--corpus", required=True)
    p.add_argument("--year", type=int)
    p.add_argument("--K", type=int, default=15)
    p.add_argument("--strategy", choices=("uncertainty", "random", "none", "all"), default="all")
    _flavor_arg(p)
    _trees_arg(p)
    _seed_arg(p)

    p = _add(sub, "subsample", cmd_subsample, "Retrain on fractions of the benign training records.")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--fractions", type=float, nargs="+", default=[0.1, 0.2, 0.4, 0.8])
    p.add_argument("--repeats", type=int, default=5)
    _flavor_arg(p)
    _trees_arg(p)
    _seed_arg(p)

    p = _add(sub, "cluster", cmd_cluster, "Group script bundles by fuzzy-hash similarity.")
    p.add_argument("--corpus", required=True)
    p.add_argument("--report", help="only cluster records this report flags as malicious")
    p.add_argument("--min-sim", type=int, default=90)

    p = _add(sub, "importance", cmd_importance, "Rank features by mean decrease in impurity.")
    p.add_argument("--model", required=True)
    p.add_argument("--schema", required=True)
    p.add_argument("--top", type=int, default=20)

    p = _add(sub, "report", cmd_report, "Threshold sweep, FPR-cut search and slice summary for a report.")
    p.add_argument("report")
    p.add_argument("--trees", type=int, default=300, help="vote grid of the model behind the report")
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    """Use ``--config`` values as defaults so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    path = _path(known.config, "config file")
    try:
        doc = yaml.safe_load(path.read_text("utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping")
    unknown = set(doc) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    parser.set_defaults(**doc)
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            sp.set_defaults(**{k: v for k, v in doc.items() if k in {a.dest for a in sp._actions}})


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        args.workers = max(1, int(args.workers))
        t0 = time.perf_counter()
        result = args.func(args)
        log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
    except CrxGuardError as exc:
        print(json.dumps(exc.to_json()), file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(json.dumps({"error": type(exc).__name__, "detail": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps(result, indent=1, sort_keys=True))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
