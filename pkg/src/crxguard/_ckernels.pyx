# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: tree growth, tree voting, spamsum, edit distance.

Every routine here has a line-for-line counterpart in ``_pykernels`` and the
two must produce identical output for identical input.
"""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t, int32_t, int64_t, uint32_t, int8_t
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL


cdef inline uint64_t splitmix_next(uint64_t* state) noexcept nogil:
    cdef uint64_t z
    state[0] = state[0] + GOLDEN
    z = state[0]
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


# ---------------------------------------------------------------- sorting

cdef inline void swap2(double* v, int32_t* r, Py_ssize_t i, Py_ssize_t j) noexcept nogil:
    cdef double tv = v[i]
    cdef int32_t tr = r[i]
    v[i] = v[j]
    r[i] = r[j]
    v[j] = tv
    r[j] = tr


cdef inline double median3(double* v, Py_ssize_t n) noexcept nogil:
    cdef double a = v[0], b = v[n / 2], c = v[n - 1]
    if a < b:
        if b < c:
            return b
        elif a < c:
            return c
        return a
    if a < c:
        return a
    elif b < c:
        return c
    return b


cdef void sift_down(double* v, int32_t* r, Py_ssize_t start, Py_ssize_t end) noexcept nogil:
    cdef Py_ssize_t child, maxind, root = start
    while True:
        child = root * 2 + 1
        maxind = root
        if child < end and v[maxind] < v[child]:
            maxind = child
        if child + 1 < end and v[maxind] < v[child + 1]:
            maxind = child + 1
        if maxind == root:
            break
        swap2(v, r, root, maxind)
        root = maxind


cdef void heapsort(double* v, int32_t* r, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t start = (n - 2) / 2, end = n
    while True:
        sift_down(v, r, start, end)
        if start == 0:
            break
        start -= 1
    end = n - 1
    while end > 0:
        swap2(v, r, 0, end)
        sift_down(v, r, 0, end)
        end -= 1


cdef void introsort(double* v, int32_t* r, Py_ssize_t n, int maxd) noexcept nogil:
    # three-way partition keeps runs of equal values (sparse columns) linear
    cdef double pivot
    cdef Py_ssize_t i, l, h
    while n > 1:
        if maxd <= 0:
            heapsort(v, r, n)
            return
        maxd -= 1
        pivot = median3(v, n)
        i = l = 0
        h = n
        while i < h:
            if v[i] < pivot:
                swap2(v, r, i, l)
                i += 1
                l += 1
            elif v[i] > pivot:
                h -= 1
                swap2(v, r, i, h)
            else:
                i += 1
        introsort(v, r, l, maxd)
        v += h
        r += h
        n -= h


cdef inline void sort_pairs(double* v, int32_t* r, Py_ssize_t n) noexcept nogil:
    cdef int maxd = 0
    cdef Py_ssize_t k = n
    while k > 1:
        k >>= 1
        maxd += 1
    introsort(v, r, n, 2 * maxd)


cdef Py_ssize_t partition_sign(double* v, int32_t* r, Py_ssize_t n) noexcept nogil:
    """Move negatives before positives (no zeros present); returns the negative count."""
    cdef Py_ssize_t i = 0, l = 0
    for i in range(n):
        if v[i] < 0.0:
            swap2(v, r, i, l)
            l += 1
    return l


cdef void sort_sparse(double* v, int32_t* r, Py_ssize_t n) noexcept nogil:
    # most columns are mostly zero: split off the zeros first, sort the rest
    cdef Py_ssize_t i = 0, l = 0, h = n
    while i < h:
        if v[i] < 0.0:
            swap2(v, r, i, l)
            i += 1
            l += 1
        elif v[i] > 0.0:
            h -= 1
            swap2(v, r, i, h)
        else:
            i += 1
    sort_pairs(v, r, l)
    sort_pairs(v + h, r + h, n - h)


# ---------------------------------------------------------------- trees

cdef inline double gini_proxy(int64_t n0l, int64_t n1l, int64_t n0, int64_t n1,
                              double w0, double w1) noexcept nogil:
    # weighted sum_children (m0^2 + m1^2) / (m0 + m1); larger is a purer split
    cdef double l0 = n0l * w0, l1 = n1l * w1
    cdef double r0 = (n0 - n0l) * w0, r1 = (n1 - n1l) * w1
    return (l0 * l0 + l1 * l1) / (l0 + l1) + (r0 * r0 + r1 * r1) / (r0 + r1)


def column_index(X):
    """Compressed-column copy of ``X`` (indptr, row indices, values) for sparse split search."""
    Xt = np.ascontiguousarray(np.asarray(X, dtype=np.float64).T)
    cols, rows = np.nonzero(Xt)
    indptr = np.zeros(Xt.shape[0] + 1, dtype=np.int64)
    np.cumsum(np.bincount(cols, minlength=Xt.shape[0]), out=indptr[1:])
    return indptr, rows.astype(np.int32), np.ascontiguousarray(Xt[cols, rows])


def build_tree(const double[::1, :] X, const int8_t[::1] y, const int32_t[::1] counts,
               double w0, double w1, int max_features, int min_samples_leaf,
               int max_depth, uint64_t seed, columns=None):
    """Grow one tree on the rows with ``counts > 0``; returns node arrays.

    ``columns`` is the optional :func:`column_index` of ``X``; it changes
    speed only, never the tree.
    """
    cdef Py_ssize_t n_rows = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t i, k, p, n_live = 0
    for i in range(n_rows):
        if counts[i] > 0:
            n_live += 1

    cdef int32_t[::1] rows = np.empty(max(n_live, 1), dtype=np.int32)
    k = 0
    for i in range(n_rows):
        if counts[i] > 0:
            rows[k] = <int32_t>i
            k += 1
    cdef int32_t[::1] feats = np.arange(d, dtype=np.int32)
    cdef double[::1] vals = np.empty(max(n_live, 1), dtype=np.float64)
    cdef int32_t[::1] order = np.empty(max(n_live, 1), dtype=np.int32)
    cdef int64_t[::1] c0 = np.where(np.asarray(y) == 0, np.asarray(counts), 0).astype(np.int64)
    cdef int64_t[::1] c1 = np.where(np.asarray(y) == 1, np.asarray(counts), 0).astype(np.int64)

    cdef bint sparse = columns is not None
    cdef const int64_t[::1] indptr
    cdef const int32_t[::1] indices
    cdef const double[::1] data
    cdef int32_t[::1] mark = np.full(max(n_rows, 1), -1, dtype=np.int32)
    if sparse:
        indptr, indices, data = columns
        if indptr.shape[0] != d + 1:
            raise ValueError("column index does not match X")

    # node storage, grown by doubling
    cdef Py_ssize_t cap = 64, n_nodes = 0
    node_feature = np.empty(cap, dtype=np.int32)
    node_threshold = np.empty(cap, dtype=np.float64)
    node_left = np.empty(cap, dtype=np.int32)
    node_right = np.empty(cap, dtype=np.int32)
    node_value = np.empty(cap, dtype=np.int8)
    node_improvement = np.empty(cap, dtype=np.float64)
    cdef int32_t[::1] nf = node_feature
    cdef double[::1] nt = node_threshold
    cdef int32_t[::1] nl = node_left
    cdef int32_t[::1] nr = node_right
    cdef int8_t[::1] nv = node_value
    cdef double[::1] ni = node_improvement

    # explicit stack: (start, end, depth, parent, is_left, n_known)
    # feats[:n_known] holds features already known to be constant on the node's rows
    stack = [(0, n_live, 0, -1, 0, 0)]
    cdef uint64_t state = seed
    cdef Py_ssize_t start, end, n_node, j, lo, f_i, n_known, n_found, nnz, n_neg, left
    cdef int depth, parent, is_left, visited, best_feature
    cdef int32_t f, row
    cdef int64_t n0, n1, n0l, n1l
    cdef double m0, m1, parent_term, best_proxy, proxy, thr, best_thr, first, cur, nxt
    cdef int node_id
    cdef bint found, constant

    while stack:
        start, end, depth, parent, is_left, n_known = stack.pop()
        if n_nodes == cap:
            cap *= 2
            node_feature = np.resize(node_feature, cap)
            node_threshold = np.resize(node_threshold, cap)
            node_left = np.resize(node_left, cap)
            node_right = np.resize(node_right, cap)
            node_value = np.resize(node_value, cap)
            node_improvement = np.resize(node_improvement, cap)
            nf = node_feature
            nt = node_threshold
            nl = node_left
            nr = node_right
            nv = node_value
            ni = node_improvement
        node_id = <int>n_nodes
        n_nodes += 1
        if parent >= 0:
            if is_left:
                nl[parent] = node_id
            else:
                nr[parent] = node_id

        n0 = 0
        n1 = 0
        for k in range(start, end):
            row = rows[k]
            n0 += c0[row]
            n1 += c1[row]
            mark[row] = node_id
        m0 = n0 * w0
        m1 = n1 * w1
        nf[node_id] = -1
        nt[node_id] = 0.0
        nl[node_id] = -1
        nr[node_id] = -1
        ni[node_id] = 0.0
        nv[node_id] = 1 if m1 > m0 else 0

        n_node = end - start
        if n0 == 0 or n1 == 0 or n_node < 2 * min_samples_leaf or (max_depth >= 0 and depth >= max_depth):
            continue

        parent_term = (m0 * m0 + m1 * m1) / (m0 + m1)
        found = False
        best_proxy = 0.0
        best_feature = -1
        best_thr = 0.0
        visited = 0
        n_found = 0
        f_i = d
        # draw without replacement from feats[n_known + n_found : f_i]; visited
        # features move to the tail, constant ones join the known prefix
        while visited < max_features and n_known + n_found < f_i:
            lo = n_known + n_found
            j = lo + <Py_ssize_t>(splitmix_next(&state) % <uint64_t>(f_i - lo))
            f = feats[j]

            if sparse and indptr[f + 1] - indptr[f] < n_node:
                # fewer stored entries than rows: the node holds at least one zero
                nnz = 0
                for p in range(indptr[f], indptr[f + 1]):
                    row = indices[p]
                    if mark[row] == node_id:
                        vals[nnz] = data[p]
                        order[nnz] = row
                        nnz += 1
                constant = nnz == 0
            else:
                nnz = -1
                constant = True
                first = X[rows[start], f]
                for k in range(n_node):
                    order[k] = rows[start + k]
                    vals[k] = X[order[k], f]
                    if vals[k] != first:
                        constant = False
            if constant:
                feats[j] = feats[lo]
                feats[lo] = f
                n_found += 1
                continue
            f_i -= 1
            feats[j] = feats[f_i]
            feats[f_i] = f
            visited += 1

            if nnz < 0:
                sort_sparse(&vals[0], &order[0], n_node)
                n0l = 0
                n1l = 0
                for k in range(n_node - 1):
                    row = order[k]
                    n0l += c0[row]
                    n1l += c1[row]
                    if vals[k + 1] == vals[k]:
                        continue
                    if k + 1 < min_samples_leaf or n_node - (k + 1) < min_samples_leaf:
                        continue
                    proxy = gini_proxy(n0l, n1l, n0, n1, w0, w1)
                    if not found or proxy > best_proxy:
                        found = True
                        best_proxy = proxy
                        best_feature = f
                        thr = (vals[k] + vals[k + 1]) / 2.0
                        if thr == vals[k + 1]:
                            thr = vals[k]
                        best_thr = thr
                continue

            # sparse column: sorted negatives, one block of zeros, sorted positives
            n_neg = partition_sign(&vals[0], &order[0], nnz)
            sort_pairs(&vals[0], &order[0], n_neg)
            sort_pairs(&vals[n_neg], &order[n_neg], nnz - n_neg)
            n0l = 0
            n1l = 0
            left = 0
            for k in range(nnz + 1):
                if k < n_neg:
                    row = order[k]
                    n0l += c0[row]
                    n1l += c1[row]
                    left += 1
                    cur = vals[k]
                    nxt = vals[k + 1] if k + 1 < n_neg else 0.0
                elif k == n_neg:
                    # left now holds everything but the positives
                    n0l = n0
                    n1l = n1
                    for p in range(n_neg, nnz):
                        row = order[p]
                        n0l -= c0[row]
                        n1l -= c1[row]
                    left += n_node - nnz
                    if k == nnz:
                        break
                    cur = 0.0
                    nxt = vals[k]
                else:
                    row = order[k - 1]
                    n0l += c0[row]
                    n1l += c1[row]
                    left += 1
                    if k == nnz:
                        break
                    cur = vals[k - 1]
                    nxt = vals[k]
                if nxt == cur:
                    continue
                if left < min_samples_leaf or n_node - left < min_samples_leaf:
                    continue
                proxy = gini_proxy(n0l, n1l, n0, n1, w0, w1)
                if not found or proxy > best_proxy:
                    found = True
                    best_proxy = proxy
                    best_feature = f
                    thr = (cur + nxt) / 2.0
                    if thr == nxt:
                        thr = cur
                    best_thr = thr

        if not found:
            continue

        # stable partition of rows[start:end] into <= thr | > thr; ascending
        # row order keeps the column gathers above cache friendly
        i = start
        j = 0
        for k in range(start, end):
            row = rows[k]
            if X[row, best_feature] <= best_thr:
                rows[i] = row
                i += 1
            else:
                order[j] = row
                j += 1
        for k in range(j):
            rows[i + k] = order[k]
        nf[node_id] = best_feature
        nt[node_id] = best_thr
        ni[node_id] = best_proxy - parent_term
        stack.append((i, end, depth + 1, node_id, 0, n_known + n_found))
        stack.append((start, i, depth + 1, node_id, 1, n_known + n_found))

    return (node_feature[:n_nodes].copy(), node_threshold[:n_nodes].copy(),
            node_left[:n_nodes].copy(), node_right[:n_nodes].copy(),
            node_value[:n_nodes].copy(), node_improvement[:n_nodes].copy())


def add_tree_votes(const double[:, :] X, const int32_t[::1] feature, const double[::1] threshold,
                   const int32_t[::1] left, const int32_t[::1] right, const int8_t[::1] value,
                   int32_t[::1] votes):
    """Add one tree's 0/1 leaf votes for every row of ``X`` into ``votes``."""
    cdef Py_ssize_t n = X.shape[0], i
    cdef int32_t node
    with nogil:
        for i in range(n):
            node = 0
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            votes[i] += value[node]


# ---------------------------------------------------------------- spamsum

cdef int BLOCKSIZE_MIN = 3
cdef int SPAMSUM_LENGTH = 64
cdef int ROLL_WINDOW = 7
cdef uint32_t HASH_INIT = 0x27
B64 = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/"

# FNV-style 6-bit block hash, tabulated: SUM_TABLE[h][c & 63]
cdef unsigned char SUM_TABLE[64][64]


cdef void _init_sum_table() noexcept:
    cdef uint32_t h, c, v
    for h in range(64):
        for c in range(64):
            # 32-bit FNV-1 step on the truncated state, reduced to 6 bits
            v = ((h * 0x01000193) ^ c) & 63
            SUM_TABLE[h][c] = <unsigned char>v


_init_sum_table()


def spamsum(const unsigned char[::1] data):
    """Return (block_size, sig1, sig2) for ``data`` (non-empty)."""
    cdef Py_ssize_t n = data.shape[0], i
    cdef uint32_t bs = BLOCKSIZE_MIN
    cdef const unsigned char* b64 = B64
    while <uint64_t>bs * SPAMSUM_LENGTH < <uint64_t>n:
        bs *= 2
    cdef unsigned char window[7]
    cdef uint32_t h1, h2, h3, rh, c
    cdef uint32_t bh1, bh2
    cdef int widx, len1, len2
    cdef char sig1[65]
    cdef char sig2[33]
    cdef int last1, last2
    while True:
        for i in range(7):
            window[i] = 0
        h1 = h2 = h3 = 0
        widx = 0
        rh = 0
        bh1 = bh2 = HASH_INIT
        len1 = len2 = 0
        last1 = last2 = -1
        for i in range(n):
            c = data[i]
            bh1 = SUM_TABLE[bh1][c & 63]
            bh2 = SUM_TABLE[bh2][c & 63]
            h2 = h2 - h1 + ROLL_WINDOW * c
            h1 = h1 + c - window[widx]
            window[widx] = <unsigned char>c
            widx += 1
            if widx == ROLL_WINDOW:
                widx = 0
            h3 = (h3 << 5) ^ c
            rh = h1 + h2 + h3
            if rh % bs == bs - 1:
                last1 = bh1
                if len1 < SPAMSUM_LENGTH - 1:
                    sig1[len1] = b64[bh1]
                    len1 += 1
                    bh1 = HASH_INIT
                    last1 = -1
                if rh % (2 * bs) == 2 * bs - 1:
                    last2 = bh2
                    if len2 < SPAMSUM_LENGTH // 2 - 1:
                        sig2[len2] = b64[bh2]
                        len2 += 1
                        bh2 = HASH_INIT
                        last2 = -1
        if bs > <uint32_t>BLOCKSIZE_MIN and len1 < SPAMSUM_LENGTH // 2:
            bs //= 2
            continue
        if rh != 0:
            sig1[len1] = b64[bh1]
            len1 += 1
            sig2[len2] = b64[bh2]
            len2 += 1
        else:
            if last1 >= 0:
                sig1[len1] = b64[last1]
                len1 += 1
            if last2 >= 0:
                sig2[len2] = b64[last2]
                len2 += 1
        break
    return int(bs), sig1[:len1].decode("ascii"), sig2[:len2].decode("ascii")


def edit_distance(str s, str t):
    """Insert/delete cost 1, substitution cost 2."""
    cdef Py_ssize_t m = len(s), n = len(t), i, j
    cdef int* prev
    cdef int* cur
    cdef int* swp
    cdef int a, b, c
    if m == 0:
        return n
    if n == 0:
        return m
    prev = <int*>malloc((n + 1) * sizeof(int))
    cur = <int*>malloc((n + 1) * sizeof(int))
    try:
        for j in range(n + 1):
            prev[j] = <int>j
        for i in range(1, m + 1):
            cur[0] = <int>i
            for j in range(1, n + 1):
                a = prev[j] + 1
                b = cur[j - 1] + 1
                c = prev[j - 1] + (0 if s[i - 1] == t[j - 1] else 2)
                if b < a:
                    a = b
                if c < a:
                    a = c
                cur[j] = a
            swp = prev
            prev = cur
            cur = swp
        return prev[n]
    finally:
        free(prev)
        free(cur)
