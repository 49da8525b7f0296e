"""Context-triggered piecewise hashing (ssdeep-compatible) and similarity clustering."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Mapping

from crxguard import _backend
from crxguard.errors import EmptyInput

MIN_BLOCKSIZE = 3
SPAMSUM_LENGTH = 64
ROLLING_WINDOW = 7
_RUNS = re.compile(r"(.)\1{3,}")


@dataclass(frozen=True)
class FuzzyHash:
    block_size: int
    sig1: str
    sig2: str

    def __str__(self) -> str:
        return f"{self.block_size}:{self.sig1}:{self.sig2}"

    @classmethod
    def parse(cls, text: str) -> "FuzzyHash":
        bs, s1, s2 = text.split(":")
        return cls(int(bs), s1, s2)


def ctph(data: bytes | str, kernels=None) -> FuzzyHash:
    if isinstance(data, str):
        data = data.encode("utf-8")
    if not data:
        raise EmptyInput("cannot hash empty input")
    kernels = kernels or _backend.kernels
    bs, s1, s2 = kernels.spamsum(bytes(data))
    return FuzzyHash(bs, s1, s2)


def _strip_runs(sig: str) -> str:
    """Collapse runs of more than three identical symbols to three."""
    return _RUNS.sub(lambda m: m.group(1) * 3, sig)


def _has_common_substring(a: str, b: str) -> bool:
    if len(a) < ROLLING_WINDOW or len(b) < ROLLING_WINDOW:
        return False
    grams = {a[i:i + ROLLING_WINDOW] for i in range(len(a) - ROLLING_WINDOW + 1)}
    return any(b[i:i + ROLLING_WINDOW] in grams for i in range(len(b) - ROLLING_WINDOW + 1))


def _score_strings(a: str, b: str, block_size: int, kernels) -> int:
    if len(a) > SPAMSUM_LENGTH or len(b) > SPAMSUM_LENGTH:
        return 0
    if not _has_common_substring(a, b):
        return 0
    score = kernels.edit_distance(a, b)
    score = (score * SPAMSUM_LENGTH) // (len(a) + len(b))
    score = (100 * score) // SPAMSUM_LENGTH
    if score >= 100:
        return 0
    score = 100 - score
    # small block sizes cannot justify a high score from short signatures
    if block_size >= (99 + ROLLING_WINDOW) // ROLLING_WINDOW * MIN_BLOCKSIZE:
        return score
    return min(score, block_size // MIN_BLOCKSIZE * min(len(a), len(b)))


def similarity(h1: FuzzyHash, h2: FuzzyHash, kernels=None) -> int:
    """0..100; 100 for identical hashes, 0 for incomparable block sizes."""
    kernels = kernels or _backend.kernels
    b1, b2 = h1.block_size, h2.block_size
    if b1 != b2 and b1 != 2 * b2 and b2 != 2 * b1:
        return 0
    a1, a2 = _strip_runs(h1.sig1), _strip_runs(h1.sig2)
    c1, c2 = _strip_runs(h2.sig1), _strip_runs(h2.sig2)
    if b1 == b2 and a1 == c1:
        return 100
    if b1 == b2:
        return max(_score_strings(a1, c1, b1, kernels), _score_strings(a2, c2, 2 * b1, kernels))
    if b1 == 2 * b2:
        return _score_strings(a1, c2, b1, kernels)
    return _score_strings(a2, c1, b2, kernels)


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[tuple[str, ...], ...]
    unclustered: tuple[str, ...]
    hashes: Mapping[str, FuzzyHash]

    def to_json(self) -> str:
        doc = {
            "clusters": [{"members": list(c), "representative_hash": str(self.hashes[c[0]])}
                         for c in self.clusters],
            "unclustered": list(self.unclustered),
        }
        return json.dumps(doc, indent=1)


class _UnionFind:
    def __init__(self, items) -> None:
        self.parent = {x: x for x in items}

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if rb < ra:
                ra, rb = rb, ra
            self.parent[rb] = ra


def cluster_hashes(hashes: Mapping[str, FuzzyHash], min_sim: int = 90, kernels=None) -> ClusterSet:
    """Single-linkage groups over pairs scoring strictly above ``min_sim``."""
    ids = sorted(hashes)
    uf = _UnionFind(ids)
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            if similarity(hashes[a], hashes[b], kernels) > min_sim:
                uf.union(a, b)
    groups: dict[str, list[str]] = {}
    for x in ids:
        groups.setdefault(uf.find(x), []).append(x)
    clusters = sorted((tuple(g) for g in groups.values() if len(g) >= 2), key=lambda g: (-len(g), g))
    unclustered = tuple(g[0] for g in groups.values() if len(g) == 1)
    return ClusterSet(tuple(clusters), tuple(sorted(unclustered)), dict(hashes))


def cluster_flagged(bundles: Mapping[str, bytes | str], min_sim: int = 90, kernels=None) -> ClusterSet:
    """Cluster extensions by the fuzzy hash of their concatenated script bundle."""
    hashes = {rid: ctph(data, kernels) for rid, data in bundles.items() if data}
    return cluster_hashes(hashes, min_sim, kernels)
