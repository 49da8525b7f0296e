"""Vocabularies and the frozen feature layout.

All vocabularies are built from a training split only. Top-K lists rank by
document frequency (how many extensions carry a value), ties broken
lexicographically; each top-K family always occupies K slots so the
metadata block is exactly 2150 wide even when a small corpus yields fewer
than K distinct values (unused slots stay zero).
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Iterable, Sequence

from crxguard.catalog import PermissionCatalog, default_catalog, parse_catalog_text

if TYPE_CHECKING:
    from crxguard.corpus import Corpus, ExtensionRecord

TOP_K = 400
NGRAM_N = 4
NGRAM_CAP = 2457
SCHEMA_FORMAT = "crxguard-schema/1"

TOPK_KINDS = ("host_permission", "cs_match", "description_kw", "summary_kw", "review_kw")


@dataclass(frozen=True)
class TopKVocabulary:
    field_kind: str
    entries: tuple[str, ...]
    K: int = TOP_K

    def __post_init__(self) -> None:
        if self.field_kind not in TOPK_KINDS:
            raise ValueError(f"unknown field kind {self.field_kind!r}")
        if len(self.entries) > self.K or len(set(self.entries)) != len(self.entries):
            raise ValueError("entries must be unique and at most K")


@dataclass(frozen=True)
class NGramVocabulary:
    grams: tuple[tuple[str, ...], ...]
    n: int = NGRAM_N
    cap: int = NGRAM_CAP

    def __post_init__(self) -> None:
        if len(self.grams) > self.cap or len(set(self.grams)) != len(self.grams):
            raise ValueError("grams must be unique and at most cap")


def field_values(record: "ExtensionRecord", field_kind: str) -> frozenset[str]:
    if field_kind == "host_permission":
        return record.manifest.host_permissions if record.manifest else frozenset()
    if field_kind == "cs_match":
        return record.manifest.cs_matches if record.manifest else frozenset()
    if field_kind == "description_kw":
        return record.description_words
    if field_kind == "summary_kw":
        return record.summary_words
    if field_kind == "review_kw":
        return record.review_words
    raise ValueError(f"unknown field kind {field_kind!r}")


def _require_training(corpus: "Corpus") -> None:
    if corpus.role != "train":
        raise ValueError("vocabularies are built from a training split only "
                         f"(got corpus role {corpus.role!r})")


def rank_top(counts: Counter, k: int) -> tuple:
    return tuple(v for v, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k])


def build_topk(train: "Corpus", field_kind: str, K: int = TOP_K) -> TopKVocabulary:
    _require_training(train)
    df: Counter = Counter()
    for rec in train:
        df.update(field_values(rec, field_kind))
    return TopKVocabulary(field_kind, rank_top(df, K), K)


def count_ngrams(unit_seqs: Iterable[Sequence[str]], n: int = NGRAM_N) -> Counter:
    counts: Counter = Counter()
    for units in unit_seqs:
        units = tuple(units)
        counts.update(units[i:i + n] for i in range(len(units) - n + 1))
    return counts


def build_ngram_vocab(train_units: Iterable[Sequence[str]], cap: int = NGRAM_CAP, n: int = NGRAM_N) -> NGramVocabulary:
    """Keep the ``cap`` most frequent n-grams (corpus frequency, ties by tuple order)."""
    return NGramVocabulary(rank_top(count_ngrams(train_units, n), cap), n, cap)


# Table-5 row order: (family, kind, width or None for top-K width)
_META_LAYOUT = (
    ("permissions", "catalog"),
    ("host_permissions", "host_permission"),
    ("cs_matches", "cs_match"),
    ("n_content_scripts", 1),
    ("n_service_workers", 1),
    ("users", 1),
    ("rating_avg", 1),
    ("rating_count", 1),
    ("description_kw", "description_kw"),
    ("summary_kw", "summary_kw"),
    ("review_kw", "review_kw"),
    ("same_developer_count", 1),
    ("crx_size", 1),
    ("file_count", 1),
    ("js_file_count", 1),
    ("js_size", 1),
    ("related_permissions", "catalog"),
)


@dataclass(frozen=True)
class FeatureSchema:
    catalog: PermissionCatalog
    top_k: dict[str, TopKVocabulary]
    ngrams: NGramVocabulary

    def __hash__(self) -> int:
        return hash(self.schema_digest)

    @property
    def layout(self) -> tuple[tuple[str, int], ...]:
        out = []
        for family, kind in _META_LAYOUT:
            if kind == "catalog":
                out.append((family, len(self.catalog)))
            elif isinstance(kind, str):
                out.append((family, self.top_k[kind].K))
            else:
                out.append((family, kind))
        out.append(("source_ngrams", len(self.ngrams.grams)))
        return tuple(out)

    @property
    def offsets(self) -> dict[str, tuple[int, int]]:
        out, pos = {}, 0
        for family, dim in self.layout:
            out[family] = (pos, pos + dim)
            pos += dim
        return out

    @property
    def metadata_dim(self) -> int:
        return sum(dim for fam, dim in self.layout if fam != "source_ngrams")

    @property
    def source_dim(self) -> int:
        return len(self.ngrams.grams)

    @property
    def combined_dim(self) -> int:
        return self.metadata_dim + self.source_dim

    def flavor_slice(self, flavor: str) -> slice:
        if flavor == "metadata":
            return slice(0, self.metadata_dim)
        if flavor == "source":
            return slice(self.metadata_dim, self.combined_dim)
        if flavor == "combined":
            return slice(0, self.combined_dim)
        raise ValueError(f"unknown flavor {flavor!r}")

    def content(self) -> dict:
        return {
            "catalog": {"version": self.catalog.version, "names": list(self.catalog.names)},
            "top_k": {k: {"K": v.K, "entries": list(v.entries)} for k, v in sorted(self.top_k.items())},
            "ngrams": {"n": self.ngrams.n, "cap": self.ngrams.cap, "grams": [list(g) for g in self.ngrams.grams]},
        }

    @cached_property
    def schema_digest(self) -> str:
        return _digest(self.content())

    def flavor_digest(self, flavor: str) -> str:
        return f"{self.schema_digest[:16]}:{flavor}"

    def feature_names(self) -> list[str]:
        names: list[str] = []
        for family, dim in self.layout:
            if family in ("permissions", "related_permissions"):
                names += [f"{family}:{n}" for n in self.catalog.names]
            elif family == "source_ngrams":
                names += ["source:" + "/".join(g) for g in self.ngrams.grams]
            elif dim == 1:
                names.append(family)
            else:
                kind = dict(_META_LAYOUT)[family]
                entries = self.top_k[kind].entries
                names += [f"{family}:{entries[i]}" if i < len(entries) else f"{family}:<unused{i}>"
                          for i in range(dim)]
        return names

    def to_json(self) -> str:
        doc = {"format": SCHEMA_FORMAT, "digest": self.schema_digest, **self.content()}
        return json.dumps(doc, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "FeatureSchema":
        from crxguard.errors import DigestMismatch, VersionMismatch

        doc = json.loads(text)
        if doc.get("format") != SCHEMA_FORMAT:
            raise VersionMismatch(f"schema format {doc.get('format')!r}")
        catalog = parse_catalog_text("\n".join(doc["catalog"]["names"]))
        top_k = {k: TopKVocabulary(k, tuple(v["entries"]), v["K"]) for k, v in doc["top_k"].items()}
        ng = doc["ngrams"]
        schema = cls(catalog, top_k, NGramVocabulary(tuple(tuple(g) for g in ng["grams"]), ng["n"], ng["cap"]))
        if schema.schema_digest != doc.get("digest"):
            raise DigestMismatch("schema content does not match its digest")
        return schema


def _digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()
    return hashlib.sha256(blob).hexdigest()


def freeze_schema(catalog: PermissionCatalog | None, top_k: Iterable[TopKVocabulary],
                  ngrams: NGramVocabulary) -> FeatureSchema:
    tk = {v.field_kind: v for v in top_k}
    missing = set(TOPK_KINDS) - set(tk)
    if missing:
        raise ValueError(f"missing top-K vocabularies: {sorted(missing)}")
    return FeatureSchema(catalog or default_catalog(), tk, ngrams)


def build_schema(train: "Corpus", units_of, K: int = TOP_K, cap: int = NGRAM_CAP,
                 catalog: PermissionCatalog | None = None) -> FeatureSchema:
    """Build every vocabulary from ``train``; ``units_of(record)`` yields its unit sequence."""
    _require_training(train)
    top_k = [build_topk(train, kind, K) for kind in TOPK_KINDS]
    seqs = (units_of(rec).units for rec in train)
    return freeze_schema(catalog, top_k, build_ngram_vocab(seqs, cap))
