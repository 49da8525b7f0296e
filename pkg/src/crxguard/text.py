"""Free-text normalisation for description/summary/review keywords.

Deterministic stand-in for an NLP lemmatiser: a shipped irregular-form
table plus a handful of suffix rules, iterated to a fixpoint so that
normalising already-normalised output is a no-op.
"""

from __future__ import annotations

import re
from functools import lru_cache
from importlib import resources

_TOKEN = re.compile(r"[^\W_]+")
_VOWELS = set("aeiouy")


def _data(name: str) -> str:
    return resources.files("crxguard").joinpath(f"data/{name}").read_text("utf-8")


@lru_cache(maxsize=1)
def stop_words() -> frozenset[str]:
    return frozenset(ln.strip() for ln in _data("stopwords.txt").splitlines()
                     if ln.strip() and not ln.startswith("#"))


@lru_cache(maxsize=1)
def lemma_table() -> dict[str, str]:
    table = {}
    for ln in _data("lemmas.txt").splitlines():
        if ln.strip() and not ln.startswith("#"):
            form, lemma = ln.split("\t")
            table[form] = lemma
    return table


def _undouble(stem: str) -> str:
    if len(stem) >= 3 and stem[-1] == stem[-2] and stem[-1] not in "lsz":
        return stem[:-1]
    return stem


def _lemma_step(word: str, table: dict[str, str]) -> str:
    if word in table:
        return table[word]
    if len(word) <= 3:
        return word
    if word.endswith("ies") and len(word) > 4:
        return word[:-3] + "y"
    if word.endswith("sses"):
        return word[:-2]
    if word.endswith(("ss", "us", "is")):
        return word
    if word.endswith("s"):
        return word[:-1]
    if word.endswith("ing") and len(word) > 5 and _VOWELS & set(word[:-3]):
        return _undouble(word[:-3])
    if word.endswith("ed") and len(word) > 4 and _VOWELS & set(word[:-2]):
        return _undouble(word[:-2])
    return word


def lemmatize(word: str) -> str:
    table = lemma_table()
    # every rule shortens the word and table lemmas are fixpoints
    while True:
        nxt = _lemma_step(word, table)
        if nxt == word:
            return word
        word = nxt


def prep_text(text: str) -> frozenset[str]:
    """Case-fold, tokenise, drop stop words, lemmatise, upper-case, dedupe."""
    if not text:
        return frozenset()
    stops = stop_words()
    out = set()
    for tok in _TOKEN.findall(text.casefold()):
        if tok in stops:
            continue
        lemma = lemmatize(tok)
        # a lemma can itself be a stop word ("does" -> "do")
        if len(lemma) < 2 or lemma in stops:
            continue
        out.add(lemma.upper())
    return frozenset(out)
