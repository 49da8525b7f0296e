from __future__ import annotations

import datetime as dt
import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crxguard.corpus import (
    Corpus,
    ingest,
    normalize_label,
    split_monthly,
    split_random,
    split_temporal,
    write_corpus,
)
from crxguard.errors import EmptyCorpus, EmptySide, InvalidConfig, InvalidRatio
from crxguard.synth import (
    SynthConfig,
    base_profiles,
    drifted_config,
    expected_means,
    load_config,
    synthesize,
)

from helpers import make_record, package_bytes

_DUMMY = make_record()


def _rec(i: int, label: str = "benign", when: dt.date = dt.date(2020, 1, 1)):
    return replace(_DUMMY, pkg=replace(_DUMMY.pkg, id=f"id{i:05d}"), label=label, last_update=when)


def _corpus(n_benign: int, n_malicious: int, when=lambda i: dt.date(2020, 1, 1)) -> Corpus:
    recs = [_rec(i, "benign", when(i)) for i in range(n_benign)]
    recs += [_rec(n_benign + i, "malicious", when(n_benign + i)) for i in range(n_malicious)]
    return Corpus(tuple(recs), "synthetic", 0)


# ---------------------------------------------------------------- ingestion


def _write_ext(root, name, meta=None, manifest=None, files=None):
    d = root / name
    d.mkdir()
    manifest = manifest or {"manifest_version": 3, "background": {"service_worker": "w.js"}}
    (d / "package.crx").write_bytes(package_bytes(manifest, files if files is not None else {"w.js": "var w;"}))
    if meta is not None:
        (d / "meta.json").write_text(json.dumps(meta))


def test_ingest_three_valid_one_missing_sidecar(tmp_path):
    for i in range(3):
        _write_ext(tmp_path, f"e{i}", {"id": f"ext{i}", "label": "benign", "last_update": "2021-03-04"})
    _write_ext(tmp_path, "nosidecar")
    corpus = ingest(tmp_path)
    assert len(corpus) == 3
    assert [w.code for w in corpus.warnings] == ["missing_sidecar"]


def test_ingest_empty_directory(tmp_path):
    with pytest.raises(EmptyCorpus):
        ingest(tmp_path)


def test_ingest_excludes_ineligible(tmp_path):
    _write_ext(tmp_path, "good", {"id": "good"})
    _write_ext(tmp_path, "noscript", {"id": "noscript"}, manifest={"manifest_version": 3}, files={})
    corpus = ingest(tmp_path)
    assert corpus.ids == ["good"]
    assert "ineligible" in {w.code for w in corpus.warnings}


def test_label_alias_round_trip(tmp_path):
    assert normalize_label("malware") == "malicious"
    assert normalize_label("MALICIOUS") == "malicious"
    assert normalize_label(None) == "unknown"
    _write_ext(tmp_path, "m", {"id": "m", "label": "malware", "rating_count": 0, "rating_avg": 4.5,
                               "related_permissions": [["tabs"], [], ["storage", "tabs"]]})
    rec = ingest(tmp_path).records[0]
    assert rec.label == "malicious"
    assert rec.rating_avg == 0.0
    assert rec.related_permission_sets == (frozenset({"tabs"}), frozenset(), frozenset({"storage", "tabs"}))


def test_write_corpus_then_ingest_round_trip(tmp_path):
    corpus = synthesize(SynthConfig(years=(2020,), benign_per_year=6, malicious_per_year=3), seed=5)
    write_corpus(corpus, tmp_path / "c")
    back = ingest(tmp_path / "c")
    by_id = {r.id: r for r in back}
    kept = [r for r in corpus if r.pkg.script_bundle is not None]
    assert sorted(by_id) == sorted(r.id for r in kept)
    for r in kept:
        b = by_id[r.id]
        assert b.sidecar() == r.sidecar()
        assert b.pkg.files == r.pkg.files
        assert b.pkg.script_bundle.data == r.pkg.script_bundle.data


def test_ingest_parallel_matches_serial(tmp_path):
    corpus = synthesize(SynthConfig(years=(2020,), benign_per_year=8, malicious_per_year=4), seed=6)
    write_corpus(corpus, tmp_path)
    a, b = ingest(tmp_path), ingest(tmp_path, workers=2)
    assert a.ids == b.ids
    assert [r.sidecar() for r in a] == [r.sidecar() for r in b]


# ---------------------------------------------------------------- splits


def test_split_random_stratified_counts():
    train, test = split_random(_corpus(100, 10), 0.8, seed=1)
    assert train.class_counts() == {"benign": 80, "malicious": 8}
    assert test.class_counts() == {"benign": 20, "malicious": 2}
    assert train.role == "train" and test.role == "test"


def test_split_random_rejects_bad_ratio():
    for ratio in (0.0, 1.0, 1.5):
        with pytest.raises(InvalidRatio):
            split_random(_corpus(10, 2), ratio, 0)


def test_split_random_deterministic():
    c = _corpus(50, 7)
    assert split_random(c, 0.8, 3)[0].ids == split_random(c, 0.8, 3)[0].ids
    assert split_random(c, 0.8, 3)[0].ids != split_random(c, 0.8, 4)[0].ids


@settings(max_examples=40, deadline=None)
@given(nb=st.integers(1, 60), nm=st.integers(1, 20), ratio=st.floats(0.05, 0.95), seed=st.integers(0, 2**31))
def test_split_random_partitions_and_preserves_ratio(nb, nm, ratio, seed):
    c = _corpus(nb, nm)
    train, test = split_random(c, ratio, seed)
    assert set(train.ids).isdisjoint(test.ids)
    assert set(train.ids) | set(test.ids) == set(c.ids)
    for label, n in (("benign", nb), ("malicious", nm)):
        assert abs(train.class_counts().get(label, 0) - ratio * n) <= 1


def test_split_temporal_boundaries():
    dates = [dt.date(2018, 5, 1), dt.date(2018, 12, 31), dt.date(2019, 1, 1), dt.date(2019, 7, 7)]
    c = _corpus(4, 0, when=lambda i: dates[i])
    train, test = split_temporal(c, 2019)
    assert [r.last_update for r in train] == dates[:2]
    assert [r.last_update for r in test] == dates[2:]
    with pytest.raises(EmptySide):
        split_temporal(c, 2021)


@settings(max_examples=40, deadline=None)
@given(days=st.lists(st.integers(0, 365 * 4), min_size=2, max_size=40), year=st.integers(2019, 2022))
def test_split_temporal_never_leaks(days, year):
    c = _corpus(len(days), 0, when=lambda i: dt.date(2018, 1, 1) + dt.timedelta(days=days[i]))
    try:
        train, test = split_temporal(c, year)
    except EmptySide:
        return
    cutoff = dt.date(year, 1, 1)
    assert all(r.last_update < cutoff for r in train)
    assert all(r.last_update >= cutoff and r.last_update.year == year for r in test)
    assert set(train.ids).isdisjoint(test.ids)


def test_split_monthly_buckets():
    dates = [dt.date(2021, 1, 1), dt.date(2021, 1, 31), dt.date(2021, 2, 1), dt.date(2021, 12, 31),
             dt.date(2020, 12, 31), dt.date(2022, 1, 1)]
    months = split_monthly(_corpus(len(dates), 0, when=lambda i: dates[i]), 2021)
    assert len(months) == 12
    assert [len(m) for m in months] == [2, 1] + [0] * 9 + [1]


# ---------------------------------------------------------------- synthesizer


def test_synth_deterministic():
    cfg = SynthConfig(years=(2020, 2021), benign_per_year=10, malicious_per_year=3)
    a, b = synthesize(cfg, 3), synthesize(cfg, 3)
    assert [r.sidecar() for r in a] == [r.sidecar() for r in b]
    assert [r.pkg.archive.zip_payload for r in a] == [r.pkg.archive.zip_payload for r in b]
    c = synthesize(cfg, 4)
    assert [r.sidecar() for r in a] != [r.sidecar() for r in c]


def test_synth_drift_free_file_count_ratio():
    corpus = synthesize(SynthConfig(years=(2020,), benign_per_year=900, malicious_per_year=100), seed=11)
    assert len(corpus) == 1000
    med = {lab: np.median([r.pkg.file_count for r in corpus if r.label == lab]) for lab in ("benign", "malicious")}
    assert med["malicious"] >= 5 * med["benign"]


def test_synth_records_are_valid():
    corpus = synthesize(SynthConfig(years=(2019, 2020), benign_per_year=30, malicious_per_year=10), seed=2)
    assert corpus.provenance == "synthetic" and corpus.seed == 2
    assert corpus.class_counts() == {"benign": 60, "malicious": 20}
    for r in corpus:
        assert r.year in (2019, 2020)
        assert len(r.related_permission_sets) <= 4
        assert r.rating_count > 0 or r.rating_avg == 0


def _closed_form_gap(cfg: SynthConfig, year: int) -> dict[str, float]:
    b = expected_means(cfg, "benign", year)
    m = expected_means(cfg, "malicious", year)
    return {k: abs(b[k] - m[k]) / max(abs(b[k]), abs(m[k])) for k in b}


def test_full_drift_weight_brings_class_means_within_ten_percent():
    cfg = drifted_config(drift_schedule={2018: 0.0, 2019: 0.5, 2020: 1.0}, years=(2018, 2019, 2020))
    gaps = _closed_form_gap(cfg, 2020)
    assert max(gaps.values()) <= 0.10
    # the legacy year keeps the classes apart
    assert max(_closed_form_gap(cfg, 2018).values()) > 0.5


def test_expected_means_interpolate_between_profiles():
    cfg = drifted_config(drift_schedule={2020: 0.25}, years=(2020,))
    legacy = base_profiles(cfg)["benign"].numeric_means()
    got = expected_means(cfg, "benign", 2020)
    assert set(got) == set(legacy)
    nodrift = expected_means(replace(cfg, drift_enabled=False), "benign", 2020)
    assert nodrift == pytest.approx(legacy)
    assert got != pytest.approx(legacy)


def test_full_drift_empirical_means_track_closed_form():
    cfg = drifted_config(drift_schedule={2020: 1.0}, years=(2020,), benign_per_year=400, malicious_per_year=400,
                         campaign_share=0.0, ambiguity={"benign": 0.0, "malicious": 0.0})
    corpus = synthesize(cfg, 9)
    fc = {lab: np.mean([r.pkg.file_count for r in corpus if r.label == lab]) for lab in ("benign", "malicious")}
    assert abs(fc["benign"] - fc["malicious"]) / max(fc.values()) <= 0.10


def test_invalid_config():
    with pytest.raises(InvalidConfig):
        SynthConfig(years=())
    with pytest.raises(InvalidConfig):
        SynthConfig(drift_schedule={2020: 1.5})
    with pytest.raises(InvalidConfig):
        SynthConfig(mv3_malicious_ambiguity=2.0)


def test_shipped_yaml_matches_defaults(tmp_path):
    shipped = load_config()
    assert replace(shipped, drift_schedule={}) == SynthConfig()
    assert not shipped.drift_enabled
    bad = tmp_path / "bad.yaml"
    bad.write_text("no_such_key: 1\n")
    with pytest.raises(InvalidConfig):
        load_config(bad)
    bad.write_text("years: [unclosed\n")
    with pytest.raises(InvalidConfig):
        load_config(bad)
