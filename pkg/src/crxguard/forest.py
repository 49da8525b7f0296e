"""Random-forest training, Youden's-J threshold calibration and model files.

Probabilities are hard-vote fractions ``k / n_trees``. Tree growth happens in
the kernel backend (:mod:`crxguard._backend`); this module handles seeding,
bootstrap resampling, class weighting and persistence.

Model file layout (little endian)::

    b"CRXGMODL"               8-byte magic
    uint32 version            currently 1
    uint32 header_len
    header                    UTF-8 JSON: config, threshold, calibration record,
                              flavor, schema digest, feature_dim, n_trees,
                              train_fingerprint, body_sha256
    body                      per tree: uint32 n_nodes, then
                              int32[n] feature, float64[n] threshold,
                              int32[n] left, int32[n] right, int8[n] value,
                              float64[n] improvement
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from crxguard import _backend
from crxguard.errors import (
    DegenerateData,
    DegenerateFold,
    DigestMismatch,
    DimMismatch,
    SchemaMismatch,
    VersionMismatch,
)

log = logging.getLogger(__name__)

MODEL_MAGIC = b"CRXGMODL"
MODEL_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 300
    bootstrap: bool = True
    class_weight: str = "balanced"  # "balanced" | "none"
    min_samples_leaf: int = 1
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.class_weight not in ("balanced", "none"):
            raise ValueError("class_weight must be 'balanced' or 'none'")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be at least 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")

    def max_features(self, d: int) -> int:
        return max(1, int(np.floor(np.sqrt(d))))


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray  # int32, -1 marks a leaf
    threshold: np.ndarray  # float64; go left iff x[feature] <= threshold
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # int8 leaf vote, 1 = malicious
    improvement: np.ndarray  # weighted Gini decrease at each split node

    @property
    def n_nodes(self) -> int:
        return len(self.feature)


@dataclass(frozen=True)
class Forest:
    trees: tuple[Tree, ...]
    feature_dim: int
    schema_digest: str
    train_fingerprint: str
    config: TrainConfig

    @property
    def n_trees(self) -> int:
        return len(self.trees)


@dataclass(frozen=True)
class CalibrationRecord:
    fold_thresholds: tuple[float, ...] = ()
    fold_j: tuple[float, ...] = ()
    folds: int = 0
    seed: int | None = None


@dataclass(frozen=True)
class CalibratedModel:
    forest: Forest
    threshold: float
    calibration_record: CalibrationRecord = field(default_factory=CalibrationRecord)
    flavor: str = "combined"

    def with_threshold(self, threshold: float) -> "CalibratedModel":
        return replace(self, threshold=float(threshold))


# ---------------------------------------------------------------- training


def class_weights(y: np.ndarray, mode: str) -> tuple[float, float]:
    """Per-class sample weights; "balanced" gives N / (2 * N_c)."""
    n = len(y)
    n1 = int(np.count_nonzero(y))
    n0 = n - n1
    if mode == "none":
        return 1.0, 1.0
    return n / (2.0 * n0), n / (2.0 * n1)


def tree_seeds(seed: int, n_trees: int) -> np.ndarray:
    """Independent (bootstrap, feature-sampling) seed pairs per tree."""
    return np.random.SeedSequence(seed).generate_state(2 * n_trees, dtype=np.uint64).reshape(n_trees, 2)


def data_digest(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(str(X.shape).encode())
    h.update(np.ascontiguousarray(X, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(y, dtype=np.int8).tobytes())
    return h.hexdigest()


def _as_labels(y) -> np.ndarray:
    y = np.asarray(y)
    if y.dtype.kind in "US":
        return (y == "malicious").astype(np.int8)
    return (y != 0).astype(np.int8)


def train(X, y, config: TrainConfig, schema_digest: str = "", kernels=None) -> Forest:
    kernels = kernels or _backend.kernels
    X = np.asfortranarray(X, dtype=np.float64)
    y = _as_labels(y)
    if X.ndim != 2 or X.shape[0] != len(y):
        raise DimMismatch(f"X has shape {X.shape} but y has {len(y)} labels")
    if len(np.unique(y)) < 2:
        raise DegenerateData("training data contains a single class")
    if not np.isfinite(X).all():
        raise DegenerateData("training data contains non-finite values")
    n, d = X.shape
    w0, w1 = class_weights(y, config.class_weight)
    mf = config.max_features(d)
    max_depth = -1 if config.max_depth is None else config.max_depth
    columns = kernels.column_index(X)
    trees = []
    for boot_seed, split_seed in tree_seeds(config.seed, config.n_trees):
        if config.bootstrap:
            idx = np.random.default_rng(int(boot_seed)).integers(0, n, size=n)
            counts = np.bincount(idx, minlength=n).astype(np.int32)
        else:
            counts = np.ones(n, dtype=np.int32)
        arrays = kernels.build_tree(X, y, counts, w0, w1, mf, config.min_samples_leaf, max_depth,
                                    np.uint64(split_seed), columns)
        trees.append(Tree(*arrays))
    fingerprint = hashlib.sha256(
        (json.dumps(asdict(config), sort_keys=True) + data_digest(X, y)).encode()).hexdigest()
    return Forest(tuple(trees), d, schema_digest, fingerprint, config)


# ---------------------------------------------------------------- prediction


def _check_dim(forest: Forest, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != forest.feature_dim:
        raise DimMismatch(f"expected {forest.feature_dim} features, got shape {X.shape}")
    return X


def votes(forest: Forest, X, kernels=None) -> np.ndarray:
    """Number of trees voting malicious, per row."""
    kernels = kernels or _backend.kernels
    X = _check_dim(forest, X)
    out = np.zeros(X.shape[0], dtype=np.int32)
    for t in forest.trees:
        kernels.add_tree_votes(X, t.feature, t.threshold, t.left, t.right, t.value, out)
    return out


def predict_proba(forest: Forest, X):
    """Fraction of trees voting malicious; scalar for a single vector, array for a matrix."""
    single = np.ndim(X) == 1
    p = votes(forest, X) / forest.n_trees
    return float(p[0]) if single else p


def classify(model: CalibratedModel, X):
    """``"malicious"`` iff probability >= threshold; vectorised over rows."""
    p = predict_proba(model.forest, X)
    if np.ndim(p) == 0:
        return "malicious" if p >= model.threshold else "benign"
    return np.where(p >= model.threshold, "malicious", "benign")


def classify_proba(proba, threshold: float) -> np.ndarray:
    return np.asarray(proba) >= threshold


# ---------------------------------------------------------------- calibration


def stratified_folds(y: np.ndarray, folds: int, seed: int) -> np.ndarray:
    """Fold index per row: each class is shuffled then dealt round-robin."""
    y = _as_labels(y)
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(y), dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        if len(idx) < folds:
            raise DegenerateFold(f"class {cls} has {len(idx)} samples, fewer than {folds} folds")
        assignment[idx[rng.permutation(len(idx))]] = np.arange(len(idx)) % folds
    return assignment


def best_vote_cut(fold_votes: np.ndarray, y: np.ndarray, n_trees: int) -> tuple[int, Fraction]:
    """Smallest k maximising J = TPR - FPR when flagging ``votes >= k``; k in 0..n_trees."""
    y = _as_labels(y)
    P = int(y.sum())
    N = len(y) - P
    if P == 0 or N == 0:
        raise DegenerateFold("validation fold lacks a class")
    if len(fold_votes) and (fold_votes.min() < 0 or fold_votes.max() > n_trees):
        raise ValueError(f"vote counts must lie in 0..{n_trees}")
    hist_p = np.bincount(fold_votes[y == 1], minlength=n_trees + 1)
    hist_n = np.bincount(fold_votes[y == 0], minlength=n_trees + 1)
    tp = np.cumsum(hist_p[::-1])[::-1]  # rows with votes >= k
    fp = np.cumsum(hist_n[::-1])[::-1]
    scaled = tp.astype(object) * N - fp.astype(object) * P  # J * P * N, exact
    k = int(np.argmax(scaled))  # first maximum = smallest threshold
    return k, Fraction(int(scaled[k]), P * N)


@dataclass(frozen=True)
class FoldVotes:
    fold: int
    val_index: np.ndarray
    votes: np.ndarray
    n_trees: int


def fold_config(config: TrainConfig, seed: int, fold: int) -> TrainConfig:
    derived = int(np.random.SeedSequence([seed, fold]).generate_state(1, dtype=np.uint32)[0])
    return replace(config, seed=derived)


def cross_val_votes(X, y, config: TrainConfig, folds: int = 5, seed: int = 0) -> list[FoldVotes]:
    X = np.asarray(X, dtype=np.float64)
    y = _as_labels(y)
    assignment = stratified_folds(y, folds, seed)
    out = []
    for f in range(folds):
        tr = assignment != f
        va = np.flatnonzero(~tr)
        forest = train(X[tr], y[tr], fold_config(config, seed, f))
        out.append(FoldVotes(f, va, votes(forest, X[va]), forest.n_trees))
    return out


def threshold_from_folds(fold_votes: Sequence[FoldVotes], y) -> tuple[float, CalibrationRecord]:
    y = _as_labels(y)
    cuts = []
    js = []
    total = Fraction(0)
    for fv in fold_votes:
        k, j = best_vote_cut(fv.votes, y[fv.val_index], fv.n_trees)
        t = Fraction(k, fv.n_trees)
        total += t
        cuts.append(float(t))
        js.append(float(j))
    threshold = float(total / len(fold_votes))
    return threshold, CalibrationRecord(tuple(cuts), tuple(js), len(fold_votes))


def calibrate_threshold(X, y, config: TrainConfig, folds: int = 5, seed: int = 0) -> tuple[float, CalibrationRecord]:
    fv = cross_val_votes(X, y, config, folds, seed)
    threshold, record = threshold_from_folds(fv, y)
    return threshold, replace(record, seed=seed)


def cross_val_accuracy(fold_votes: Sequence[FoldVotes], y, threshold: float) -> float:
    """Accuracy of the pooled out-of-fold predictions at ``threshold``."""
    y = _as_labels(y)
    correct = 0
    total = 0
    for fv in fold_votes:
        pred = (fv.votes / fv.n_trees) >= threshold
        correct += int(np.count_nonzero(pred == (y[fv.val_index] == 1)))
        total += len(fv.val_index)
    return correct / total


def fit_calibrated(X, y, config: TrainConfig, folds: int = 5, seed: int | None = None,
                   schema_digest: str = "", flavor: str = "combined") -> CalibratedModel:
    seed = config.seed if seed is None else seed
    threshold, record = calibrate_threshold(X, y, config, folds, seed)
    forest = train(X, y, config, schema_digest)
    return CalibratedModel(forest, threshold, record, flavor)


# ---------------------------------------------------------------- importance


def feature_importance(forest: Forest) -> list[tuple[int, float]]:
    """Mean decrease in impurity: summed split improvements, normalised, descending (ties by index)."""
    total = np.zeros(forest.feature_dim, dtype=np.float64)
    for t in forest.trees:
        split = t.feature >= 0
        np.add.at(total, t.feature[split], t.improvement[split])
    s = total.sum()
    if s > 0:
        total = total / s
    order = sorted(range(forest.feature_dim), key=lambda i: (-total[i], i))
    return [(i, float(total[i])) for i in order]


# ---------------------------------------------------------------- persistence


def _tree_bytes(t: Tree) -> bytes:
    n = t.n_nodes
    return b"".join([
        struct.pack("<I", n),
        t.feature.astype("<i4").tobytes(),
        t.threshold.astype("<f8").tobytes(),
        t.left.astype("<i4").tobytes(),
        t.right.astype("<i4").tobytes(),
        t.value.astype("<i1").tobytes(),
        t.improvement.astype("<f8").tobytes(),
    ])


def save(model: CalibratedModel) -> bytes:
    body = b"".join(_tree_bytes(t) for t in model.forest.trees)
    f = model.forest
    header = {
        "config": asdict(f.config),
        "threshold": model.threshold,
        "calibration_record": asdict(model.calibration_record),
        "flavor": model.flavor,
        "schema_digest": f.schema_digest,
        "feature_dim": f.feature_dim,
        "n_trees": f.n_trees,
        "train_fingerprint": f.train_fingerprint,
        "body_sha256": hashlib.sha256(body).hexdigest(),
    }
    hb = json.dumps(header, sort_keys=True).encode()
    return MODEL_MAGIC + struct.pack("<II", MODEL_VERSION, len(hb)) + hb + body


def load(data: bytes, expected_schema_digest: str | None = None) -> CalibratedModel:
    if data[:8] != MODEL_MAGIC or len(data) < 16:
        raise VersionMismatch("not a crxguard model file")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != MODEL_VERSION:
        raise VersionMismatch(f"model format version {version}, expected {MODEL_VERSION}")
    try:
        header = json.loads(data[16:16 + hlen])
    except ValueError as exc:
        raise DigestMismatch(f"corrupt model header: {exc}") from None
    body = data[16 + hlen:]
    if hashlib.sha256(body).hexdigest() != header.get("body_sha256"):
        raise DigestMismatch("model body does not match its digest")
    if expected_schema_digest is not None and header["schema_digest"] != expected_schema_digest:
        raise SchemaMismatch("model was trained against a different feature schema")
    buf = io.BytesIO(body)
    trees = []
    for _ in range(header["n_trees"]):
        (n,) = struct.unpack("<I", buf.read(4))
        arrs = [np.frombuffer(buf.read(n * np.dtype(dt).itemsize), dtype=dt).astype(dt.lstrip("<"))
                for dt in ("<i4", "<f8", "<i4", "<i4", "<i1", "<f8")]
        trees.append(Tree(*arrs))
    cfg = TrainConfig(**header["config"])
    rec = header["calibration_record"]
    record = CalibrationRecord(tuple(rec["fold_thresholds"]), tuple(rec["fold_j"]), rec["folds"], rec["seed"])
    forest = Forest(tuple(trees), header["feature_dim"], header["schema_digest"], header["train_fingerprint"], cfg)
    return CalibratedModel(forest, float(header["threshold"]), record, header["flavor"])
