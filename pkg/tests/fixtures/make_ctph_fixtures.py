"""Regenerate ``ctph_vectors.json``: fuzzy-hash reference vectors for the cluster tests.

Hashes come from ``ppdeep`` (an independent spamsum implementation). Scores
come from :func:`reference_score` below, written from the ssdeep 2.14
comparison rules without reusing any crxguard code: the weighted edit
distance (insert/delete 1, substitute 2) is computed through the identity
``len(a) + len(b) - 2 * LCS(a, b)``.

Run ``python tests/fixtures/make_ctph_fixtures.py`` to rewrite the file.
"""

from __future__ import annotations

import hashlib
import json
import random
from pathlib import Path

OUT = Path(__file__).with_name("ctph_vectors.json")

WORDS = ("var", "let", "const", "function", "return", "chrome", "tabs", "query", "document", "window",
         "fetch", "then", "addEventListener", "click", "storage", "local", "get", "set", "url", "data")

RECIPES = [
    {"name": "short_ascii", "kind": "text", "seed": 1, "size": 40},
    {"name": "one_kb_js", "kind": "js", "seed": 2, "size": 1024},
    {"name": "four_kb_js", "kind": "js", "seed": 3, "size": 4096},
    {"name": "four_kb_js_edit", "kind": "js_edit", "seed": 3, "size": 4096, "edits": 3},
    {"name": "four_kb_js_heavy_edit", "kind": "js_edit", "seed": 3, "size": 4096, "edits": 40},
    {"name": "random_bytes_2k", "kind": "random", "seed": 4, "size": 2048},
    {"name": "runs", "kind": "runs", "seed": 5, "size": 3000},
    {"name": "thirty_kb_js", "kind": "js", "seed": 6, "size": 30000},
    {"name": "thirty_kb_js_append", "kind": "js_append", "seed": 6, "size": 30000, "extra": 2500},
    {"name": "seventy_kb_js", "kind": "js", "seed": 7, "size": 70000},
]


def _js(seed: int, size: int) -> bytes:
    rng = random.Random(seed)
    out = []
    total = 0
    while total < size:
        line = " ".join(rng.choice(WORDS) for _ in range(rng.randint(3, 9))) + f"({rng.randint(0, 999)});\n"
        out.append(line)
        total += len(line)
    return "".join(out).encode()[:size]


def materialize(recipe: dict) -> bytes:
    kind, seed, size = recipe["kind"], recipe["seed"], recipe["size"]
    if kind == "text":
        return bytes(random.Random(seed).choice(b"abcdefghij klmnop") for _ in range(size))
    if kind == "js":
        return _js(seed, size)
    if kind == "js_edit":
        data = bytearray(_js(seed, size))
        rng = random.Random(seed + 1000)
        for _ in range(recipe["edits"]):
            data[rng.randrange(len(data))] = rng.choice(b"XYZ")
        return bytes(data)
    if kind == "js_append":
        return _js(seed, size) + _js(seed + 1, recipe["extra"])
    if kind == "random":
        return random.Random(seed).randbytes(size)
    if kind == "runs":
        rng = random.Random(seed)
        return b"".join(bytes([rng.randrange(256)]) * rng.randint(1, 60) for _ in range(size // 30))[:size]
    raise ValueError(kind)


# ---------------------------------------------------------------- score oracle

SPAMSUM_LENGTH = 64
MIN_BLOCKSIZE = 3
WINDOW = 7


def _collapse(sig: str) -> str:
    out = []
    for ch in sig:
        if len(out) >= 3 and out[-1] == out[-2] == out[-3] == ch:
            continue
        out.append(ch)
    return "".join(out)


def _lcs(a: str, b: str) -> int:
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) - 1, -1, -1):
        for j in range(len(b) - 1, -1, -1):
            table[i][j] = table[i + 1][j + 1] + 1 if a[i] == b[j] else max(table[i + 1][j], table[i][j + 1])
    return table[0][0]


def _shares_window(a: str, b: str) -> bool:
    return any(a[i:i + WINDOW] in b for i in range(len(a) - WINDOW + 1))


def _pair_score(a: str, b: str, block_size: int) -> int:
    if len(a) > SPAMSUM_LENGTH or len(b) > SPAMSUM_LENGTH or not _shares_window(a, b):
        return 0
    dist = len(a) + len(b) - 2 * _lcs(a, b)
    scaled = (dist * SPAMSUM_LENGTH) // (len(a) + len(b))
    scaled = (100 * scaled) // SPAMSUM_LENGTH
    if scaled >= 100:
        return 0
    score = 100 - scaled
    if block_size >= (99 + WINDOW) // WINDOW * MIN_BLOCKSIZE:
        return score
    return min(score, block_size // MIN_BLOCKSIZE * min(len(a), len(b)))


def reference_score(h1: str, h2: str) -> int:
    b1, x1, y1 = h1.split(":")
    b2, x2, y2 = h2.split(":")
    b1, b2 = int(b1), int(b2)
    x1, y1, x2, y2 = map(_collapse, (x1, y1, x2, y2))
    if b1 == b2:
        if x1 == x2:
            return 100
        return max(_pair_score(x1, x2, b1), _pair_score(y1, y2, 2 * b1))
    if b1 == 2 * b2:
        return _pair_score(x1, y2, b1)
    if b2 == 2 * b1:
        return _pair_score(y1, x2, b2)
    return 0


def build() -> dict:
    import ppdeep

    vectors = []
    for recipe in RECIPES:
        data = materialize(recipe)
        vectors.append({**recipe, "sha256": hashlib.sha256(data).hexdigest(), "hash": ppdeep.hash(data)})
    pairs = []
    for i in range(len(vectors)):
        for j in range(i, len(vectors)):
            pairs.append({"a": vectors[i]["name"], "b": vectors[j]["name"],
                          "score": reference_score(vectors[i]["hash"], vectors[j]["hash"])})
    return {"vectors": vectors, "pairs": pairs}


if __name__ == "__main__":
    OUT.write_text(json.dumps(build(), indent=1) + "\n", "utf-8")
    print(f"wrote {OUT}")
