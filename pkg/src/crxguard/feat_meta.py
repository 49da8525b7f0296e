"""Metadata features (2150 dims) and the feature-matrix container.

Feature matrices are stored as ``.npz`` files holding the dense matrix, row
ids, labels, per-row source availability and the schema digest; a CSV export
exists for inspection only.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from crxguard.catalog import PermissionCatalog
from crxguard.errors import SchemaMismatch
from crxguard.feat_src import UnitCache, extract_source
from crxguard.text import prep_text
from crxguard.vocab import FeatureSchema, field_values

if TYPE_CHECKING:
    from crxguard.corpus import Corpus, ExtensionRecord

MATRIX_FORMAT = "crxguard-matrix/1"

__all__ = [
    "MetadataVector",
    "FeatureMatrix",
    "prep_text",
    "related_permissions",
    "extract_metadata",
    "build_matrix",
]


@dataclass(frozen=True)
class MetadataVector:
    values: np.ndarray
    schema_digest: str


def related_permissions(record: "ExtensionRecord", catalog: PermissionCatalog) -> np.ndarray:
    """Slot p = -(number of related sets lacking p), only for permissions the extension declares."""
    out = np.zeros(len(catalog), dtype=np.int64)
    if record.manifest is None:
        return out
    index = catalog.index
    for perm in record.manifest.api_permissions:
        slot = index.get(perm)
        if slot is not None:
            out[slot] = -sum(perm not in s for s in record.related_permission_sets)
    return out


def _fill_topk(out: np.ndarray, start: int, entries_index: dict[str, int], values) -> None:
    for v in values:
        i = entries_index.get(v)
        if i is not None:
            out[start + i] = 1.0


_INDEX_MEMO: dict[tuple, dict[str, int]] = {}


def _entries_index(entries: tuple[str, ...]) -> dict[str, int]:
    idx = _INDEX_MEMO.get(entries)
    if idx is None:
        if len(_INDEX_MEMO) > 64:
            _INDEX_MEMO.clear()
        idx = _INDEX_MEMO[entries] = {e: i for i, e in enumerate(entries)}
    return idx


_TOPK_FAMILIES = {
    "host_permissions": "host_permission",
    "cs_matches": "cs_match",
    "description_kw": "description_kw",
    "summary_kw": "summary_kw",
    "review_kw": "review_kw",
}


def metadata_values(record: "ExtensionRecord", schema: FeatureSchema) -> np.ndarray:
    off = schema.offsets
    out = np.zeros(schema.metadata_dim, dtype=np.float64)
    pkg = record.pkg
    manifest = pkg.manifest
    cat_index = schema.catalog.index

    if manifest is not None:
        start = off["permissions"][0]
        for perm in manifest.api_permissions:
            slot = cat_index.get(perm)
            if slot is not None:
                out[start + slot] = 1.0
    for family, kind in _TOPK_FAMILIES.items():
        _fill_topk(out, off[family][0], _entries_index(schema.top_k[kind].entries), field_values(record, kind))

    n_cs = len({js for cs in manifest.content_scripts for js in cs.js}) if manifest else 0
    n_sw = len(manifest.worker_files) if manifest else 0
    scalars = {
        "n_content_scripts": n_cs,
        "n_service_workers": n_sw,
        "users": record.users,
        "rating_avg": record.rating_avg if record.rating_count > 0 else 0.0,
        "rating_count": record.rating_count,
        "same_developer_count": record.same_developer_count,
        "crx_size": pkg.crx_size,
        "file_count": pkg.file_count,
        "js_file_count": len(pkg.js_files),
        "js_size": pkg.js_size,
    }
    for family, value in scalars.items():
        out[off[family][0]] = float(value)
    start = off["related_permissions"][0]
    out[start:start + len(schema.catalog)] = related_permissions(record, schema.catalog)
    return out


def extract_metadata(record: "ExtensionRecord", schema: FeatureSchema,
                     catalog: PermissionCatalog | None = None) -> MetadataVector:
    if catalog is not None and catalog.names != schema.catalog.names:
        raise SchemaMismatch("record catalog differs from the schema catalog")
    return MetadataVector(metadata_values(record, schema), schema.schema_digest)


# ---------------------------------------------------------------- matrices


@dataclass(frozen=True)
class FeatureMatrix:
    """Combined-layout rows; source columns are zero where ``has_source`` is false."""

    X: np.ndarray
    ids: tuple[str, ...]
    labels: tuple[str, ...]
    has_source: np.ndarray
    schema_digest: str

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def y(self) -> np.ndarray:
        return np.array([lab == "malicious" for lab in self.labels], dtype=np.int8)

    def rows(self, mask) -> "FeatureMatrix":
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask
        return FeatureMatrix(self.X[idx], tuple(self.ids[i] for i in idx),
                             tuple(self.labels[i] for i in idx), self.has_source[idx], self.schema_digest)

    def flavor(self, schema: FeatureSchema, flavor: str) -> "FeatureMatrix":
        """Column slice for a classifier flavor; source-based flavors keep only rows with source."""
        self.check(schema)
        sub = self if flavor == "metadata" else self.rows(self.has_source)
        cols = schema.flavor_slice(flavor)
        return FeatureMatrix(np.ascontiguousarray(sub.X[:, cols]), sub.ids, sub.labels,
                             sub.has_source, schema.flavor_digest(flavor))

    def check(self, schema: FeatureSchema) -> None:
        if self.schema_digest != schema.schema_digest or self.X.shape[1] != schema.combined_dim:
            raise SchemaMismatch("feature matrix was built with a different schema")

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            np.savez_compressed(
                fh, format=np.array(MATRIX_FORMAT), X=self.X, ids=np.array(self.ids, dtype=str),
                labels=np.array(self.labels, dtype=str), has_source=self.has_source,
                schema_digest=np.array(self.schema_digest))

    @classmethod
    def load(cls, path: str | Path, schema: FeatureSchema | None = None) -> "FeatureMatrix":
        with np.load(path, allow_pickle=False) as z:
            if str(z["format"]) != MATRIX_FORMAT:
                from crxguard.errors import VersionMismatch

                raise VersionMismatch(f"matrix format {z['format']}")
            fm = cls(z["X"], tuple(z["ids"].tolist()), tuple(z["labels"].tolist()),
                     z["has_source"].astype(bool), str(z["schema_digest"]))
        if schema is not None:
            fm.check(schema)
        return fm

    def to_csv(self, schema: FeatureSchema | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        names = schema.feature_names() if schema else [f"f{i}" for i in range(self.X.shape[1])]
        w.writerow(["id", "label", "has_source"] + names)
        for i, rid in enumerate(self.ids):
            w.writerow([rid, self.labels[i], int(self.has_source[i])] + [repr(float(v)) for v in self.X[i]])
        return buf.getvalue()


def build_matrix(corpus: "Corpus", schema: FeatureSchema, units: UnitCache | None = None) -> FeatureMatrix:
    units = units if units is not None else UnitCache()
    X = np.zeros((len(corpus), schema.combined_dim), dtype=np.float64)
    has_source = np.zeros(len(corpus), dtype=bool)
    meta = schema.metadata_dim
    for i, rec in enumerate(corpus):
        X[i, :meta] = metadata_values(rec, schema)
        sv = extract_source(rec.pkg, schema, units.get(rec.pkg)) if rec.pkg.script_bundle else None
        if sv is not None:
            X[i, meta:] = sv.values
            has_source[i] = True
    return FeatureMatrix(X, tuple(corpus.ids), tuple(corpus.labels), has_source, schema.schema_digest)
