from __future__ import annotations

import datetime as dt
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crxguard import forest as F
from crxguard.active import ActiveRunConfig, run_active_loop, uncertainty_rank
from crxguard.corpus import split_monthly, split_temporal
from crxguard.evaluation import FeatureContext, fit_flavor
from crxguard.feat_src import UnitCache
from crxguard.synth import SynthConfig, synthesize

SMALL = F.TrainConfig(n_trees=11, seed=2)


@pytest.fixture(scope="module")
def setup():
    corpus = synthesize(SynthConfig(years=(2020, 2021), benign_per_year=70, malicious_per_year=20), seed=8)
    base, _ = split_temporal(corpus, 2021)
    ctx = FeatureContext.from_training(base, UnitCache())
    model, _ = fit_flavor(ctx, base, "combined", SMALL)
    return corpus, ctx, model


def test_uncertainty_rank_examples():
    assert uncertainty_rank([0.1, 0.55, 0.9, 0.45], 0.5, ["a", "b", "c", "d"]) in ([1, 3, 0, 2], [3, 1, 0, 2])
    # exact ties break on id
    assert uncertainty_rank([0.4, 0.6, 0.5], 0.5, ["z", "a", "m"]) == [2, 1, 0]


@settings(max_examples=60)
@given(st.lists(st.integers(0, 20), min_size=0, max_size=30), st.integers(0, 20))
def test_uncertainty_rank_matches_naive_sort(votes, cut):
    proba = [v / 20 for v in votes]
    ids = [f"id{i:02d}" for i in range(len(votes))]
    threshold = cut / 20
    got = uncertainty_rank(proba, threshold, ids)
    naive = sorted(range(len(ids)), key=lambda i: (abs(votes[i] - cut), ids[i]))
    assert got == naive


def test_config_validation():
    with pytest.raises(ValueError):
        ActiveRunConfig(2021, K=-1)
    with pytest.raises(ValueError):
        ActiveRunConfig(2021, strategy="greedy")


def test_none_strategy_never_retrains(setup):
    corpus, ctx, model = setup
    tr = run_active_loop(corpus, ActiveRunConfig(2021, 15, "none", 0), SMALL, initial=(ctx, model))
    assert len(tr.monthly_reports) == 12
    assert set(tr.fingerprints) == {model.forest.train_fingerprint}
    assert all(s == () for s in tr.selected_ids)
    assert len(set(tr.training_sizes)) == 1


def test_zero_budget_matches_none(setup):
    corpus, ctx, model = setup
    none = run_active_loop(corpus, ActiveRunConfig(2021, 15, "none", 0), SMALL, initial=(ctx, model))
    zero = run_active_loop(corpus, ActiveRunConfig(2021, 0, "uncertainty", 0), SMALL, initial=(ctx, model))
    assert zero.cumulative_errors == none.cumulative_errors
    assert zero.fingerprints == none.fingerprints


@pytest.mark.parametrize("strategy", ["uncertainty", "random"])
def test_labels_flow_forward_only(setup, strategy):
    corpus, ctx, model = setup
    K = 3
    tr = run_active_loop(corpus, ActiveRunConfig(2021, K, strategy, 5), SMALL, initial=(ctx, model))
    months = split_monthly(corpus, 2021)
    for m, (month, picked) in enumerate(zip(months, tr.selected_ids)):
        assert len(picked) == min(K, len(month))
        assert set(picked) <= set(month.ids)
        assert not set(picked) & tr.base_training_ids
    # month m is scored by a model that saw exactly the labels picked before it
    base_n = tr.training_sizes[0]
    for m in range(1, 12):
        assert tr.training_sizes[m] == base_n + sum(len(s) for s in tr.selected_ids[:m])
    assert all(a <= b for a, b in zip(tr.cumulative_errors, tr.cumulative_errors[1:]))
    assert tr.threshold == model.threshold


def test_uncertainty_picks_closest_to_threshold(setup):
    corpus, ctx, model = setup
    tr = run_active_loop(corpus, ActiveRunConfig(2021, 2, "uncertainty", 0), SMALL, initial=(ctx, model))
    first = tr.monthly_reports[0]
    expected = uncertainty_rank(first.proba, model.threshold, first.ids)[:2]
    assert set(tr.selected_ids[0]) == {first.ids[i] for i in expected}


def test_active_loop_deterministic(setup, tmp_path):
    corpus, ctx, model = setup
    cfg = ActiveRunConfig(2021, 4, "random", 9)
    a = run_active_loop(corpus, cfg, SMALL, initial=(ctx, model))
    b = run_active_loop(corpus, cfg, SMALL, initial=(ctx, model))
    assert a.to_dict() == b.to_dict()
    a.write(tmp_path / "a")
    b.write(tmp_path / "b")
    for name in ("active_trace.json", "active_cumulative_errors.csv", "active_precision.csv", "active_recall.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    c = run_active_loop(corpus, replace(cfg, seed=10), SMALL, initial=(ctx, model))
    assert c.selected_ids != a.selected_ids


def test_month_without_records():
    corpus = synthesize(SynthConfig(years=(2020, 2021), benign_per_year=30, malicious_per_year=10), seed=1)
    corpus = corpus.filter(lambda r: not (r.last_update.year == 2021 and r.last_update.month == 6))
    tr = run_active_loop(corpus, ActiveRunConfig(2021, 2, "uncertainty", 0), SMALL, units=UnitCache())
    assert len(tr.monthly_reports[5].ids) == 0 and tr.selected_ids[5] == ()
    assert tr.cumulative_errors[5] == tr.cumulative_errors[4]
    assert np.isfinite(tr.monthly_reports[0].threshold)
    assert dt.date(2021, 1, 1) > max(r.last_update for r in split_temporal(corpus, 2021)[0])
