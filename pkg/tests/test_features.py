from __future__ import annotations

import json
import random
import re
from collections import Counter

import esprima
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crxguard.catalog import CATALOG_SIZE, default_catalog, parse_catalog_text
from crxguard.corpus import Corpus
from crxguard.errors import DigestMismatch, SchemaMismatch
from crxguard.feat_meta import FeatureMatrix, build_matrix, extract_metadata, related_permissions
from crxguard.feat_src import UnitCache, UnitSequence, extract_source, ngram_frequencies, parse_units
from crxguard.synth import SynthConfig, synthesize
from crxguard.text import prep_text
from crxguard.vocab import (
    NGRAM_CAP,
    TOPK_KINDS,
    FeatureSchema,
    NGramVocabulary,
    TopKVocabulary,
    build_ngram_vocab,
    build_schema,
    build_topk,
    freeze_schema,
)

from helpers import make_record
from oracles import naive_ngram_frequencies

# metadata layout widths, family by family
TABLE_WIDTHS = [70, 400, 400, 1, 1, 1, 1, 1, 400, 400, 400, 1, 1, 1, 1, 1, 70]


def _train(records) -> Corpus:
    return Corpus(tuple(records), "synthetic", 0, "train")


def _empty_schema(grams=()) -> FeatureSchema:
    return freeze_schema(None, [TopKVocabulary(k, ()) for k in TOPK_KINDS], NGramVocabulary(tuple(grams)))


# ---------------------------------------------------------------- catalog / text


def test_catalog_shape():
    cat = default_catalog()
    assert len(cat) == CATALOG_SIZE == 70
    assert list(cat.names) == sorted(set(cat.names))
    with pytest.raises(ValueError):
        parse_catalog_text("\n".join(cat.names[:-1]))


def test_prep_text_examples():
    assert prep_text("") == frozenset()
    assert prep_text("is") == {"BE"}
    # oracle by hand: "running" -> strip "ing" -> "runn" -> undouble -> "run";
    # "the" is a stop word; "runner" has no rule; "runs" -> strip "s" -> "run"
    assert prep_text("running the runner runs") == {"RUN", "RUNNER"}
    assert prep_text("NEW TAB, wallpaper!!") == {"NEW", "TAB", "WALLPAPER"}


@settings(max_examples=200, deadline=None)
@given(st.text(max_size=80))
def test_prep_text_idempotent(text):
    words = prep_text(text)
    assert prep_text(" ".join(words)) == words
    assert all(w == w.upper() and re.search(r"\w", w) for w in words)


# ---------------------------------------------------------------- vocab


def test_topk_all_urls_first():
    cs = {"manifest_version": 3, "content_scripts": [{"matches": ["<all_urls>"], "js": ["script.js"]}]}
    recs = [make_record(f"r{i}", manifest=cs, files={"script.js": "1"}) for i in range(3)]
    recs.append(make_record("r9", manifest={**cs, "content_scripts": [{"matches": ["*://a.com/*"], "js": ["script.js"]}]},
                            files={"script.js": "1"}))
    vocab = build_topk(_train(recs), "cs_match")
    assert vocab.entries[0] == "<all_urls>"


def test_topk_document_frequency_and_ties():
    m = lambda hosts: {"manifest_version": 3, "host_permissions": hosts,
                       "background": {"service_worker": "service_worker.js"}}
    recs = [make_record("a", manifest=m(["https://b.com/*", "https://a.com/*"])),
            make_record("b", manifest=m(["https://b.com/*", "https://a.com/*", "https://c.com/*"]))]
    vocab = build_topk(_train(recs), "host_permission")
    assert vocab.entries == ("https://a.com/*", "https://b.com/*", "https://c.com/*")
    assert build_topk(_train(recs), "host_permission", K=1).entries == ("https://a.com/*",)
    assert build_topk(_train([]), "host_permission").entries == ()


def test_vocab_refuses_non_training_corpus():
    with pytest.raises(ValueError):
        build_topk(Corpus((), "synthetic", 0, "test"), "cs_match")


def test_ngram_sliding_window():
    vocab = build_ngram_vocab([list("ABCDE")])
    assert set(vocab.grams) == {tuple("ABCD"), tuple("BCDE")}


def test_ngram_cap_and_tie_order():
    rng = random.Random(0)
    seqs = [[f"U{rng.randrange(30)}" for _ in range(300)] for _ in range(40)]
    counts = Counter(tuple(s[i:i + 4]) for s in seqs for i in range(len(s) - 3))
    assert len(counts) > NGRAM_CAP
    vocab = build_ngram_vocab(seqs)
    assert len(vocab.grams) == NGRAM_CAP
    expected = sorted(counts, key=lambda g: (-counts[g], g))[:NGRAM_CAP]
    assert list(vocab.grams) == expected
    tie = build_ngram_vocab([list("ABCDX"), list("ZBCDE")], cap=2)
    assert tie.grams == (tuple("ABCD"), tuple("BCDE"))


@pytest.fixture(scope="module")
def small_corpus():
    return synthesize(SynthConfig(years=(2020,), benign_per_year=40, malicious_per_year=10), seed=4)


def test_schema_layout_dimensions(small_corpus):
    schema = build_schema(small_corpus.as_training(), UnitCache())
    widths = [dim for fam, dim in schema.layout if fam != "source_ngrams"]
    assert widths == TABLE_WIDTHS
    assert schema.metadata_dim == sum(TABLE_WIDTHS) == 2150
    assert schema.source_dim <= 2457
    assert schema.combined_dim == schema.metadata_dim + schema.source_dim
    assert len(schema.feature_names()) == schema.combined_dim


def test_schema_digest_stable_and_sensitive(small_corpus):
    a = build_schema(small_corpus.as_training(), UnitCache())
    b = build_schema(small_corpus.as_training(), UnitCache())
    assert a.schema_digest == b.schema_digest
    back = FeatureSchema.from_json(a.to_json())
    assert back.schema_digest == a.schema_digest
    hosts = a.top_k["host_permission"]
    swapped = dict(a.top_k, host_permission=TopKVocabulary("host_permission", hosts.entries[::-1]))
    assert FeatureSchema(a.catalog, swapped, a.ngrams).schema_digest != a.schema_digest
    doc = json.loads(a.to_json())
    doc["ngrams"]["grams"] = doc["ngrams"]["grams"][::-1]
    with pytest.raises(DigestMismatch):
        FeatureSchema.from_json(json.dumps(doc))


# ---------------------------------------------------------------- metadata features


def test_listing_permissions_slots():
    schema = _empty_schema()
    vec = extract_metadata(make_record(), schema).values
    start, end = schema.offsets["permissions"]
    block = vec[start:end]
    idx = schema.catalog.index
    assert block[idx["downloads"]] == 1 and block[idx["history"]] == 1
    assert block.sum() == 2
    assert vec.shape == (2150,)


def test_rating_avg_zero_without_ratings():
    schema = _empty_schema()
    rec = make_record(rating_count=0, rating_avg=4.0)
    assert extract_metadata(rec, schema).values[schema.offsets["rating_avg"][0]] == 0


def test_related_permissions_rule():
    cat = default_catalog()
    rec = make_record(related_permission_sets=(frozenset(), frozenset({"tabs"}), frozenset(), frozenset()))
    vec = related_permissions(rec, cat)
    assert vec[cat.index["downloads"]] == -4 and vec[cat.index["history"]] == -4
    assert np.count_nonzero(vec) == 2
    rec3 = make_record(related_permission_sets=(frozenset({"downloads"}), frozenset(), frozenset({"history"})))
    vec3 = related_permissions(rec3, cat)
    assert vec3[cat.index["downloads"]] == -2 and vec3[cat.index["history"]] == -2
    bare = make_record(manifest={"manifest_version": 3, "background": {"service_worker": "service_worker.js"}})
    assert not related_permissions(bare, cat).any()


@settings(max_examples=60, deadline=None)
@given(declared=st.sets(st.sampled_from(default_catalog().names[:12]), max_size=6),
       sets=st.lists(st.sets(st.sampled_from(default_catalog().names[:12]), max_size=6), max_size=4))
def test_related_permissions_bounds(declared, sets):
    manifest = {"manifest_version": 3, "permissions": sorted(declared),
                "background": {"service_worker": "service_worker.js"}}
    rec = make_record(manifest=manifest, related_permission_sets=tuple(frozenset(s) for s in sets))
    vec = related_permissions(rec, default_catalog())
    assert vec.min() >= -len(sets) and vec.max() <= 0
    for name, i in default_catalog().index.items():
        if name not in declared:
            assert vec[i] == 0


def _reference_vector(rec, schema) -> np.ndarray:
    """Second, deliberately naive route to the 2150-vector: one family at a time from raw fields."""
    parts = []
    cat = list(schema.catalog.names)
    perms = rec.pkg.manifest.api_permissions
    parts += [1.0 if p in perms else 0.0 for p in cat]

    def topk(kind, values):
        entries = list(schema.top_k[kind].entries)
        return [1.0 if (i < len(entries) and entries[i] in values) else 0.0 for i in range(schema.top_k[kind].K)]

    m = rec.pkg.manifest
    parts += topk("host_permission", set(m.host_permissions))
    parts += topk("cs_match", {x for cs in m.content_scripts for x in cs.matches})
    parts.append(float(len({js for cs in m.content_scripts for js in cs.js})))
    parts.append(float(1 if m.service_worker else len(m.background_scripts)))
    parts.append(float(rec.users))
    parts.append(float(rec.rating_avg if rec.rating_count else 0))
    parts.append(float(rec.rating_count))
    parts += topk("description_kw", prep_text(rec.description))
    parts += topk("summary_kw", prep_text(rec.summary))
    review_words = set()
    for r in rec.reviews:
        review_words |= prep_text(r)
    parts += topk("review_kw", review_words)
    parts.append(float(rec.same_developer_count))
    parts.append(float(rec.pkg.crx_size))
    parts.append(float(len(rec.pkg.files)))
    js = {p: s for p, s in rec.pkg.files.items() if p.endswith((".js", ".mjs"))}
    parts.append(float(len(js)))
    parts.append(float(sum(js.values())))
    for p in cat:
        parts.append(float(-sum(1 for s in rec.related_permission_sets if p not in s) if p in perms else 0))
    return np.array(parts)


def test_metadata_vector_matches_reference(small_corpus):
    schema = build_schema(small_corpus.as_training(), UnitCache())
    for rec in list(small_corpus)[:25]:
        got = extract_metadata(rec, schema).values
        assert got.shape == (2150,)
        np.testing.assert_array_equal(got, _reference_vector(rec, schema))


def test_metadata_value_ranges(small_corpus):
    schema = build_schema(small_corpus.as_training(), UnitCache())
    off = schema.offsets
    for rec in small_corpus:
        v = extract_metadata(rec, schema).values
        for fam in ("permissions", "host_permissions", "cs_matches", "description_kw", "summary_kw", "review_kw"):
            assert set(np.unique(v[slice(*off[fam])])) <= {0.0, 1.0}
        rp = v[slice(*off["related_permissions"])]
        assert rp.min() >= -4 and rp.max() <= 0
        assert 0 <= v[off["rating_avg"][0]] <= 5


def test_catalog_mismatch_rejected():
    other = parse_catalog_text("\n".join(sorted(f"perm{i:02d}" for i in range(70))))
    with pytest.raises(SchemaMismatch):
        extract_metadata(make_record(), _empty_schema(), catalog=other)


def test_matrix_save_load_and_check(small_corpus, tmp_path):
    schema = build_schema(small_corpus.as_training(), UnitCache())
    fm = build_matrix(small_corpus, schema)
    fm.save(tmp_path / "m.npz")
    back = FeatureMatrix.load(tmp_path / "m.npz", schema)
    np.testing.assert_array_equal(back.X, fm.X)
    assert back.ids == fm.ids and back.labels == fm.labels
    assert (tmp_path / "m.npz").read_bytes() == (fm.save(tmp_path / "m2.npz") or (tmp_path / "m2.npz").read_bytes())
    other = _empty_schema()
    with pytest.raises(SchemaMismatch):
        FeatureMatrix.load(tmp_path / "m.npz", other)
    lines = fm.to_csv(schema).splitlines()
    assert len(lines) == len(fm) + 1
    assert lines[0].split(",")[3] == "permissions:" + schema.catalog.names[0]


def test_flavor_rows_exclude_missing_source(small_corpus):
    schema = build_schema(small_corpus.as_training(), UnitCache())
    fm = build_matrix(small_corpus, schema)
    meta, src = fm.flavor(schema, "metadata"), fm.flavor(schema, "source")
    assert len(meta) == len(small_corpus)
    assert len(src) == int(fm.has_source.sum())
    assert src.X.shape[1] == schema.source_dim and meta.X.shape[1] == 2150


# ---------------------------------------------------------------- source features


def _reference_preorder(source: str) -> list[str]:
    """Node types from esprima's own dict form, visited in key order (the parser's field order)."""
    out = []

    def walk(node):
        if isinstance(node, dict):
            if "type" in node:
                out.append(node["type"])
            for k, v in node.items():
                if k != "type":
                    walk(v)
        elif isinstance(node, list):
            for v in node:
                walk(v)

    walk(esprima.parseScript(source).toDict())
    return out


def test_parse_units_var_declaration():
    seq = parse_units("var x = 1;")
    assert seq.parse_ok
    assert list(seq.units) == _reference_preorder("var x = 1;")
    assert seq.units == ("Program", "VariableDeclaration", "VariableDeclarator", "Identifier", "Literal")


@pytest.mark.parametrize("src", [
    "function f(a, b) { return a + b * 2; }",
    "for (let i = 0; i < 3; i++) { if (i) { x[i] = `t${i}u`; } else continue; }",
    "class A extends B { m() { return new C(...args); } }",
    "const o = {a: 1, [k]: () => this.z, ...rest}; try { eval(atob(s)); } catch (e) {}",
])
def test_parse_units_match_reference_walk(src):
    assert list(parse_units(src).units) == _reference_preorder(src)


def test_parse_units_edge_cases():
    assert parse_units("") == UnitSequence(("Program",), True)
    assert parse_units("var = ;") == UnitSequence((), False)
    assert parse_units("var a = 1;") == parse_units("var a = 1;")


def test_ngram_frequency_examples():
    vocab = NGramVocabulary((tuple("ABCD"),))
    assert ngram_frequencies(UnitSequence(tuple("ABCDABCD"), True), vocab).values.tolist() == [2 / 5]
    assert not ngram_frequencies(UnitSequence(tuple("ABC"), True), vocab).values.any()


@settings(max_examples=100, deadline=None)
@given(units=st.lists(st.sampled_from("ABCDE"), max_size=30),
       grams=st.lists(st.tuples(*[st.sampled_from("ABCDEF")] * 4), unique=True, max_size=20))
def test_ngram_frequency_properties(units, grams):
    vec = ngram_frequencies(UnitSequence(tuple(units), True), NGramVocabulary(tuple(grams))).values
    np.testing.assert_array_equal(vec, naive_ngram_frequencies(units, grams))
    assert (vec >= 0).all() and (vec <= 1).all() and vec.sum() <= 1 + 1e-12
    windows = {tuple(units[i:i + 4]) for i in range(len(units) - 3)}
    if windows and windows <= set(grams):
        assert vec.sum() == pytest.approx(1.0)


def test_extract_source_absent_and_composed():
    schema = _empty_schema(grams=[("Program", "BlockStatement", "VariableDeclaration", "VariableDeclarator")])
    rec = make_record(files={"service_worker.js": "var x = 1;", "script.js": "var y = 2;"})
    sv = extract_source(rec.pkg, schema)
    expected = ngram_frequencies(parse_units(rec.pkg.script_bundle.concatenated_source), schema.ngrams).values
    np.testing.assert_array_equal(sv.values, expected)
    assert sv.values[0] > 0
    broken = make_record(files={"service_worker.js": "var = ;", "script.js": "var y;"})
    assert extract_source(broken.pkg, schema) is None
    noscripts = make_record(manifest={"manifest_version": 3}, files={})
    assert extract_source(noscripts.pkg, schema) is None


def test_unit_cache_prefill_matches_lazy(small_corpus):
    pkgs = [r.pkg for r in small_corpus if r.pkg.script_bundle][:12]
    lazy, eager = UnitCache(), UnitCache()
    eager.prefill(pkgs, workers=2)
    assert len(eager) == len(pkgs)
    assert [eager.get(p) for p in pkgs] == [lazy.get(p) for p in pkgs]
