"""Source-code features: AST node-type sequences and 4-gram relative frequencies.

The unit alphabet is the set of ESTree node-type names produced by esprima
(``Program``, ``VariableDeclaration``, ``Identifier``, ...), emitted in
depth-first pre-order with children visited in the parser's field order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable

import esprima
import numpy as np
from esprima.nodes import Node

if TYPE_CHECKING:
    from crxguard.container import ExtensionPackage
    from crxguard.vocab import FeatureSchema, NGramVocabulary

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class UnitSequence:
    units: tuple[str, ...]
    parse_ok: bool


@dataclass(frozen=True)
class SourceVector:
    values: np.ndarray
    schema_digest: str


def _children(node: Node) -> list[Node]:
    out: list[Node] = []
    for key, value in vars(node).items():
        if key == "type":
            continue
        if isinstance(value, Node):
            out.append(value)
        elif isinstance(value, list):
            out.extend(v for v in value if isinstance(v, Node))
    return out


def ast_units(tree: Node) -> tuple[str, ...]:
    units = []
    stack = [tree]
    while stack:
        node = stack.pop()
        units.append(node.type)
        stack.extend(reversed(_children(node)))
    return tuple(units)


def parse_units(source: str) -> UnitSequence:
    """Parse ``source`` as a classic script; syntax errors yield ``parse_ok=False``."""
    try:
        tree = esprima.parseScript(source)
    except Exception as exc:  # esprima.Error, RecursionError on pathological nesting
        log.debug("parse failure: %s", exc)
        return UnitSequence((), False)
    return UnitSequence(ast_units(tree), True)


class _GramIndex:
    """Maps 4-grams to vocabulary slots via integer codes (one small int per unit name)."""

    def __init__(self, vocab: "NGramVocabulary") -> None:
        self.n = vocab.n
        self.alphabet: dict[str, int] = {}
        for gram in vocab.grams:
            for u in gram:
                self.alphabet.setdefault(u, len(self.alphabet) + 1)
        self.base = len(self.alphabet) + 1
        codes = np.array([self._code_of(g) for g in vocab.grams], dtype=np.int64)
        order = np.argsort(codes, kind="stable")
        self.sorted_codes = codes[order]
        self.slot_of_sorted = order
        self.dim = len(vocab.grams)

    def _code_of(self, gram) -> int:
        code = 0
        for u in gram:
            code = code * self.base + self.alphabet[u]
        return code

    def frequencies(self, units) -> np.ndarray:
        out = np.zeros(self.dim, dtype=np.float64)
        windows = len(units) - self.n + 1
        if windows <= 0 or self.dim == 0:
            return out
        # unknown unit names map to 0 so their windows never match a vocabulary code
        ids = np.fromiter((self.alphabet.get(u, 0) for u in units), dtype=np.int64, count=len(units))
        codes = np.zeros(windows, dtype=np.int64)
        valid = np.ones(windows, dtype=bool)
        for k in range(self.n):
            part = ids[k:k + windows]
            codes = codes * self.base + part
            valid &= part > 0
        codes = codes[valid]
        if codes.size:
            pos = np.searchsorted(self.sorted_codes, codes)
            pos_c = np.minimum(pos, self.dim - 1)
            hit = self.sorted_codes[pos_c] == codes
            np.add.at(out, self.slot_of_sorted[pos_c[hit]], 1.0)
        return out / max(1, windows)


_INDEX_CACHE: dict[int, tuple["NGramVocabulary", _GramIndex]] = {}


def gram_index(vocab: "NGramVocabulary") -> _GramIndex:
    hit = _INDEX_CACHE.get(id(vocab))
    if hit is None or hit[0] is not vocab:
        if len(_INDEX_CACHE) > 16:
            _INDEX_CACHE.clear()
        hit = (vocab, _GramIndex(vocab))
        _INDEX_CACHE[id(vocab)] = hit
    return hit[1]


def ngram_frequencies(seq: UnitSequence, vocab: "NGramVocabulary", schema_digest: str = "") -> SourceVector:
    """Relative frequency of each vocabulary 4-gram over all windows of ``seq``."""
    return SourceVector(gram_index(vocab).frequencies(seq.units), schema_digest)


def extract_source(pkg: "ExtensionPackage", schema: "FeatureSchema",
                   units: UnitSequence | None = None) -> SourceVector | None:
    """Absent when the package has no script bundle or the bundle does not parse."""
    if pkg.script_bundle is None:
        return None
    seq = units if units is not None else parse_units(pkg.script_bundle.concatenated_source)
    if not seq.parse_ok:
        return None
    return ngram_frequencies(seq, schema.ngrams, schema.schema_digest)


class UnitCache:
    """Per-record memo of parsed unit sequences; parsing dominates extraction cost."""

    def __init__(self) -> None:
        self._seqs: dict[str, UnitSequence] = {}

    def __len__(self) -> int:
        return len(self._seqs)

    def get(self, pkg: "ExtensionPackage") -> UnitSequence:
        seq = self._seqs.get(pkg.id)
        if seq is None:
            if pkg.script_bundle is None:
                seq = UnitSequence((), False)
            else:
                seq = parse_units(pkg.script_bundle.concatenated_source)
            self._seqs[pkg.id] = seq
        return seq

    def __call__(self, record) -> UnitSequence:
        return self.get(record.pkg)

    def prefill(self, packages: Iterable["ExtensionPackage"], workers: int = 1) -> None:
        """Parse every uncached bundle up front, across ``workers`` processes."""
        todo = {p.id: p.script_bundle.concatenated_source for p in packages
                if p.id not in self._seqs and p.script_bundle is not None}
        if workers > 1 and len(todo) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                seqs = list(pool.map(parse_units, todo.values(), chunksize=8))
        else:
            seqs = [parse_units(src) for src in todo.values()]
        self._seqs.update(zip(todo, seqs))
