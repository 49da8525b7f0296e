"""Pure-Python/numpy twins of the compiled kernels in ``_ckernels.pyx``.

Selected automatically when the extension is not built, or forced with
``CRXGUARD_PURE_PYTHON=1``. Outputs must match the compiled path exactly:
split search works on integer class counts so summation order never
changes a floating-point result.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


class SplitMix64:
    def __init__(self, seed: int) -> None:
        self.state = int(seed) & _MASK64

    def next(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)


def column_index(X):
    """The pure-Python splitter always scans dense columns."""
    return None


def build_tree(X, y, counts, w0, w1, max_features, min_samples_leaf, max_depth, seed, columns=None):
    n_rows, d = X.shape
    y = np.asarray(y, dtype=np.int8)
    counts = np.asarray(counts, dtype=np.int32)
    c1 = np.where(y == 1, counts, 0).astype(np.int64)
    c0 = np.where(y == 0, counts, 0).astype(np.int64)
    rng = SplitMix64(seed)
    feats = np.arange(d, dtype=np.int32)

    nf: list[int] = []
    nt: list[float] = []
    nl: list[int] = []
    nr: list[int] = []
    nv: list[int] = []
    ni: list[float] = []

    # feats[:n_known] holds features already known to be constant on the node's rows
    stack = [(np.flatnonzero(counts > 0).astype(np.int32), 0, -1, 0, 0)]
    while stack:
        rows, depth, parent, is_left, n_known = stack.pop()
        node_id = len(nf)
        if parent >= 0:
            if is_left:
                nl[parent] = node_id
            else:
                nr[parent] = node_id
        n0 = int(c0[rows].sum())
        n1 = int(c1[rows].sum())
        m0 = n0 * w0
        m1 = n1 * w1
        nf.append(-1)
        nt.append(0.0)
        nl.append(-1)
        nr.append(-1)
        ni.append(0.0)
        nv.append(1 if m1 > m0 else 0)

        n_node = len(rows)
        if n0 == 0 or n1 == 0 or n_node < 2 * min_samples_leaf or (0 <= max_depth <= depth):
            continue

        parent_term = (m0 * m0 + m1 * m1) / (m0 + m1)
        best = None  # (proxy, feature, threshold)
        visited = 0
        n_found = 0
        f_i = d
        rc0 = c0[rows]
        rc1 = c1[rows]
        while visited < max_features and n_known + n_found < f_i:
            lo = n_known + n_found
            j = lo + rng.next() % (f_i - lo)
            f = int(feats[j])
            vals = X[rows, f]
            if np.all(vals == vals[0]):
                feats[j] = feats[lo]
                feats[lo] = f
                n_found += 1
                continue
            f_i -= 1
            feats[j] = feats[f_i]
            feats[f_i] = f
            visited += 1

            order = np.argsort(vals, kind="stable")
            sv = vals[order]
            n0l = np.cumsum(rc0[order])[:-1]
            n1l = np.cumsum(rc1[order])[:-1]
            pos = np.arange(1, n_node)
            ok = (sv[1:] != sv[:-1]) & (pos >= min_samples_leaf) & (n_node - pos >= min_samples_leaf)
            if not ok.any():
                continue
            idx = np.flatnonzero(ok)
            l0 = n0l[idx] * w0
            l1 = n1l[idx] * w1
            r0 = (n0 - n0l[idx]) * w0
            r1 = (n1 - n1l[idx]) * w1
            proxy = (l0 * l0 + l1 * l1) / (l0 + l1) + (r0 * r0 + r1 * r1) / (r0 + r1)
            k = int(np.argmax(proxy))
            p = float(proxy[k])
            if best is None or p > best[0]:
                i = int(idx[k])
                thr = (sv[i] + sv[i + 1]) / 2.0
                if thr == sv[i + 1]:
                    thr = sv[i]
                best = (p, f, float(thr))

        if best is None:
            continue
        proxy, f, thr = best
        go_left = X[rows, f] <= thr
        nf[node_id] = f
        nt[node_id] = thr
        ni[node_id] = proxy - parent_term
        stack.append((rows[~go_left], depth + 1, node_id, 0, n_known + n_found))
        stack.append((rows[go_left], depth + 1, node_id, 1, n_known + n_found))

    return (
        np.asarray(nf, dtype=np.int32),
        np.asarray(nt, dtype=np.float64),
        np.asarray(nl, dtype=np.int32),
        np.asarray(nr, dtype=np.int32),
        np.asarray(nv, dtype=np.int8),
        np.asarray(ni, dtype=np.float64),
    )


def add_tree_votes(X, feature, threshold, left, right, value, votes):
    node = np.zeros(X.shape[0], dtype=np.int64)
    rows = np.arange(X.shape[0])
    active = feature[node] >= 0
    while active.any():
        r = rows[active]
        nd = node[active]
        go_left = X[r, feature[nd]] <= threshold[nd]
        node[active] = np.where(go_left, left[nd], right[nd])
        active = feature[node] >= 0
    votes += value[node].astype(votes.dtype)


BLOCKSIZE_MIN = 3
SPAMSUM_LENGTH = 64
ROLL_WINDOW = 7
HASH_INIT = 0x27
B64 = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/"
_SUM_TABLE = [[((h * 0x01000193) ^ c) & 63 for c in range(64)] for h in range(64)]


def spamsum(data: bytes) -> tuple[int, str, str]:
    n = len(data)
    bs = BLOCKSIZE_MIN
    while bs * SPAMSUM_LENGTH < n:
        bs *= 2
    table = _SUM_TABLE
    while True:
        window = [0] * ROLL_WINDOW
        h1 = h2 = h3 = 0
        widx = 0
        rh = 0
        bh1 = bh2 = HASH_INIT
        sig1: list[str] = []
        sig2: list[str] = []
        last1 = last2 = -1
        bs2 = 2 * bs
        for c in data:
            bh1 = table[bh1][c & 63]
            bh2 = table[bh2][c & 63]
            h2 = (h2 - h1 + ROLL_WINDOW * c) & 0xFFFFFFFF
            h1 = (h1 + c - window[widx]) & 0xFFFFFFFF
            window[widx] = c
            widx = (widx + 1) % ROLL_WINDOW
            h3 = ((h3 << 5) ^ c) & 0xFFFFFFFF
            rh = (h1 + h2 + h3) & 0xFFFFFFFF
            if rh % bs == bs - 1:
                last1 = bh1
                if len(sig1) < SPAMSUM_LENGTH - 1:
                    sig1.append(B64[bh1])
                    bh1 = HASH_INIT
                    last1 = -1
                if rh % bs2 == bs2 - 1:
                    last2 = bh2
                    if len(sig2) < SPAMSUM_LENGTH // 2 - 1:
                        sig2.append(B64[bh2])
                        bh2 = HASH_INIT
                        last2 = -1
        if bs > BLOCKSIZE_MIN and len(sig1) < SPAMSUM_LENGTH // 2:
            bs //= 2
            continue
        if rh != 0:
            sig1.append(B64[bh1])
            sig2.append(B64[bh2])
        else:
            if last1 >= 0:
                sig1.append(B64[last1])
            if last2 >= 0:
                sig2.append(B64[last2])
        return bs, "".join(sig1), "".join(sig2)


def edit_distance(s: str, t: str) -> int:
    if not s:
        return len(t)
    if not t:
        return len(s)
    prev = list(range(len(t) + 1))
    for i, a in enumerate(s, 1):
        cur = [i] + [0] * len(t)
        for j, b in enumerate(t, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (0 if a == b else 2))
        prev = cur
    return prev[-1]
