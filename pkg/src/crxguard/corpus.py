"""Extension records, corpora, directory ingestion and dataset splits."""

from __future__ import annotations

import datetime as dt
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from crxguard.container import (
    ExtensionPackage,
    PackageWarning,
    is_eligible,
    load_package,
    zip_directory,
)
from crxguard.errors import (
    CrxGuardError,
    EmptyCorpus,
    EmptySide,
    InvalidRatio,
    MissingSidecar,
    UnreadablePackage,
)
from crxguard.text import prep_text

log = logging.getLogger(__name__)

LABELS = ("benign", "malicious", "unknown")
LABEL_ALIASES = {
    "benign": "benign",
    "clean": "benign",
    "goodware": "benign",
    "malicious": "malicious",
    "malware": "malicious",
    "unknown": "unknown",
    "unlabeled": "unknown",
    "": "unknown",
}
MAX_RELATED = 4


def normalize_label(value: object) -> str:
    if value is None:
        return "unknown"
    key = str(value).strip().lower()
    if key not in LABEL_ALIASES:
        raise ValueError(f"unknown label {value!r}")
    return LABEL_ALIASES[key]


@dataclass(frozen=True)
class ExtensionRecord:
    pkg: ExtensionPackage
    label: str = "unknown"
    last_update: dt.date | None = None
    users: int = 0
    rating_count: int = 0
    rating_avg: float = 0.0
    description: str = ""
    summary: str = ""
    reviews: tuple[str, ...] = ()
    same_developer_count: int = 0
    related_permission_sets: tuple[frozenset[str], ...] = ()
    category: str = "other"

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}")
        if self.rating_count == 0 and self.rating_avg != 0:
            object.__setattr__(self, "rating_avg", 0.0)
        if not 0.0 <= self.rating_avg <= 5.0:
            raise ValueError("rating_avg must lie in [0, 5]")
        if len(self.related_permission_sets) > MAX_RELATED:
            raise ValueError("at most four related permission sets")
        if min(self.users, self.rating_count, self.same_developer_count) < 0:
            raise ValueError("counts must be non-negative")

    @property
    def id(self) -> str:
        return self.pkg.id

    @property
    def manifest(self):
        return self.pkg.manifest

    @property
    def manifest_version(self) -> int | None:
        return self.pkg.manifest.manifest_version if self.pkg.manifest else None

    @property
    def year(self) -> int | None:
        return self.last_update.year if self.last_update else None

    @cached_property
    def description_words(self) -> frozenset[str]:
        return prep_text(self.description)

    @cached_property
    def summary_words(self) -> frozenset[str]:
        return prep_text(self.summary)

    @cached_property
    def review_words(self) -> frozenset[str]:
        words: set[str] = set()
        for review in self.reviews:
            words |= prep_text(review)
        return frozenset(words)

    def sidecar(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "last_update": self.last_update.isoformat() if self.last_update else None,
            "users": self.users,
            "rating_count": self.rating_count,
            "rating_avg": self.rating_avg,
            "description": self.description,
            "summary": self.summary,
            "reviews": list(self.reviews),
            "same_developer_count": self.same_developer_count,
            "related_permissions": [sorted(s) for s in self.related_permission_sets],
            "category": self.category,
        }


@dataclass(frozen=True)
class Corpus:
    records: tuple[ExtensionRecord, ...]
    provenance: str = "ingested"
    seed: int | None = None
    role: str | None = None  # "train" / "test" once produced by a split
    warnings: tuple[PackageWarning, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ValueError("record ids must be unique within a corpus")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ExtensionRecord]:
        return iter(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    @property
    def labels(self) -> list[str]:
        return [r.label for r in self.records]

    def class_counts(self) -> dict[str, int]:
        out = {lab: 0 for lab in LABELS}
        for r in self.records:
            out[r.label] += 1
        return {k: v for k, v in out.items() if v}

    def derive(self, records: Iterable[ExtensionRecord], role: str | None = None) -> "Corpus":
        return Corpus(tuple(records), self.provenance, self.seed, role, ())

    def as_training(self) -> "Corpus":
        """Tag this corpus as a training split (for fitting on everything available)."""
        return replace(self, role="train")

    def filter(self, pred) -> "Corpus":
        return self.derive((r for r in self.records if pred(r)), self.role)


# ---------------------------------------------------------------- splits


def split_random(corpus: Corpus, ratio: float, seed: int) -> tuple[Corpus, Corpus]:
    """Stratified per-class sampling without replacement."""
    if not 0.0 < ratio < 1.0:
        raise InvalidRatio(f"ratio must lie strictly between 0 and 1, got {ratio}")
    rng = np.random.default_rng(seed)
    train_ids: set[str] = set()
    for label in LABELS:
        ids = sorted(r.id for r in corpus if r.label == label)
        if not ids:
            continue
        n_train = int(np.floor(ratio * len(ids) + 0.5))
        picked = rng.choice(len(ids), size=n_train, replace=False)
        train_ids.update(ids[i] for i in picked)
    train = corpus.derive((r for r in corpus if r.id in train_ids), "train")
    test = corpus.derive((r for r in corpus if r.id not in train_ids), "test")
    return train, test


def _dated(corpus: Corpus) -> list[ExtensionRecord]:
    missing = [r.id for r in corpus if r.last_update is None]
    if missing:
        raise ValueError(f"{len(missing)} records lack last_update (e.g. {missing[0]})")
    return list(corpus)


def split_temporal(corpus: Corpus, year: int) -> tuple[Corpus, Corpus]:
    """Train on everything dated before Jan 1 of ``year``; test on ``year`` itself."""
    records = _dated(corpus)
    cutoff = dt.date(year, 1, 1)
    train = corpus.derive((r for r in records if r.last_update < cutoff), "train")
    test = corpus.derive((r for r in records if r.last_update.year == year), "test")
    if not len(train) or not len(test):
        raise EmptySide(f"year {year}: train={len(train)} test={len(test)}")
    return train, test


def split_monthly(corpus: Corpus, year: int) -> list[Corpus]:
    records = _dated(corpus)
    return [
        corpus.derive((r for r in records if r.last_update.year == year and r.last_update.month == m), "test")
        for m in range(1, 13)
    ]


# ---------------------------------------------------------------- ingestion

PACKAGE_NAMES = ("package.crx", "package.zip")


def _opt_int(doc: dict, key: str) -> int:
    value = doc.get(key)
    return max(0, int(value)) if value is not None else 0


def record_from_sidecar(pkg: ExtensionPackage, doc: dict) -> ExtensionRecord:
    last = doc.get("last_update")
    related = doc.get("related_permissions") or []
    rating_count = _opt_int(doc, "rating_count")
    rating_avg = float(doc.get("rating_avg") or 0.0) if rating_count else 0.0
    return ExtensionRecord(
        pkg=pkg,
        label=normalize_label(doc.get("label")),
        last_update=dt.date.fromisoformat(last) if last else None,
        users=_opt_int(doc, "users"),
        rating_count=rating_count,
        rating_avg=min(5.0, max(0.0, rating_avg)),
        description=str(doc.get("description") or ""),
        summary=str(doc.get("summary") or ""),
        reviews=tuple(str(r) for r in doc.get("reviews") or ()),
        same_developer_count=_opt_int(doc, "same_developer_count"),
        related_permission_sets=tuple(frozenset(map(str, s)) for s in related[:MAX_RELATED]),
        category=str(doc.get("category") or "other"),
    )


def _read_package_bytes(ext_dir: Path) -> bytes:
    for name in PACKAGE_NAMES:
        if (ext_dir / name).is_file():
            return (ext_dir / name).read_bytes()
    tree = ext_dir / "package"
    if tree.is_dir():
        return zip_directory(tree)
    raise UnreadablePackage(f"{ext_dir.name}: no package.crx, package.zip or package/ tree")


def load_extension_dir(ext_dir: Path) -> tuple[ExtensionRecord | None, list[PackageWarning]]:
    """Load one extension directory; problems come back as warnings, never raised."""
    name = ext_dir.name
    sidecar = ext_dir / "meta.json"
    try:
        if not sidecar.is_file():
            raise MissingSidecar(f"{name}: meta.json not found")
        try:
            doc = json.loads(sidecar.read_text("utf-8"))
        except ValueError as exc:
            raise MissingSidecar(f"{name}: unreadable meta.json ({exc})") from None
        if not isinstance(doc, dict) or not doc.get("id"):
            raise MissingSidecar(f"{name}: meta.json lacks an id")
        pkg_id = str(doc["id"])
        pkg = load_package(_read_package_bytes(ext_dir), pkg_id)
        record = record_from_sidecar(pkg, doc)
    except CrxGuardError as exc:
        return None, [PackageWarning(name, exc.code, str(exc))]
    except (ValueError, TypeError) as exc:
        return None, [PackageWarning(name, "invalid_sidecar", str(exc))]
    warnings = list(pkg.warnings)
    if not is_eligible(pkg):
        warnings.append(PackageWarning(pkg_id, "ineligible", "no valid manifest or no script"))
        return None, warnings
    return record, warnings


def ingest(root: str | os.PathLike, workers: int = 1) -> Corpus:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(root)
    dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if workers > 1 and len(dirs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(load_extension_dir, dirs, chunksize=16))
    else:
        results = [load_extension_dir(d) for d in dirs]

    records: list[ExtensionRecord] = []
    warnings: list[PackageWarning] = []
    seen: set[str] = set()
    for record, warns in results:
        warnings.extend(warns)
        if record is None:
            continue
        if record.id in seen:
            warnings.append(PackageWarning(record.id, "duplicate_id", "later copy skipped"))
            continue
        seen.add(record.id)
        records.append(record)
    for w in warnings:
        log.warning("%s", w.to_json())
    if not records:
        raise EmptyCorpus(f"no usable extension under {root}")
    return Corpus(tuple(records), "ingested", None, None, tuple(warnings))


def write_corpus(corpus: Corpus, root: str | os.PathLike) -> None:
    """Lay a corpus out in the ingestible directory format (package.crx + meta.json)."""
    from crxguard.container import write_crx

    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for rec in corpus:
        ext_dir = root / rec.id
        ext_dir.mkdir(exist_ok=True)
        archive = rec.pkg.archive
        fmt = archive.format
        data = write_crx(archive.zip_payload, "zip" if fmt == "zip" else "crx3",
                         header=b"\x00" * max(0, archive.declared_header_length - 12))
        (ext_dir / "package.crx").write_bytes(data)
        (ext_dir / "meta.json").write_text(json.dumps(rec.sidecar(), indent=1, sort_keys=True), "utf-8")
