"""Compare the compiled kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--rows 1500] [--cols 400] [--trees 20] [--repeat 3]

Each workload runs on both backends, checks that the outputs agree, and
reports the best wall time of ``--repeat`` runs plus the speedup.
"""

from __future__ import annotations

import argparse
import random
import sys
import time

import numpy as np

from crxguard import _backend
from crxguard import forest as F


def best_of(fn, repeat: int) -> tuple[float, object]:
    best, out = float("inf"), None
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - start)
    return best, out


def sparse_problem(rows: int, cols: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Mostly-zero nonnegative features, like n-gram frequencies next to metadata counts."""
    rng = np.random.default_rng(seed)
    y = (rng.random(rows) < 0.2).astype(np.int8)
    X = np.where(rng.random((rows, cols)) < 0.05, rng.random((rows, cols)), 0.0)
    X[:, : cols // 10] = rng.poisson(3 + 2 * y[:, None], size=(rows, cols // 10))
    return X, y


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=1500)
    ap.add_argument("--cols", type=int, default=400)
    ap.add_argument("--trees", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    compiled, python = _backend.compiled_kernels, _backend.python_kernels
    if compiled is None:
        print("compiled kernels are not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1

    X, y = sparse_problem(args.rows, args.cols, args.seed)
    cfg = F.TrainConfig(n_trees=args.trees, seed=args.seed)
    rng = random.Random(args.seed)
    blobs = [bytes(rng.choice(b"function var chrome.tabs();\n") for _ in range(rng.randint(2000, 60000)))
             for _ in range(40)]
    sigs = [(rng.choices("ABCDEFGH", k=64), rng.choices("ABCDEFGH", k=64)) for _ in range(2000)]
    sigs = [("".join(a), "".join(b)) for a, b in sigs]

    workloads = {
        "train forest": lambda k: F.save(F.CalibratedModel(F.train(X, y, cfg, kernels=k), 0.5, F.CalibrationRecord())),
        "forest votes": None,
        "spamsum": lambda k: [k.spamsum(b) for b in blobs],
        "edit distance": lambda k: [k.edit_distance(a, b) for a, b in sigs],
    }
    forest = F.train(X, y, cfg)
    workloads["forest votes"] = lambda k: F.votes(forest, X, kernels=k).tolist()

    print(f"{'workload':<16}{'compiled s':>12}{'python s':>12}{'speedup':>10}")
    for name, fn in workloads.items():
        tc, out_c = best_of(lambda: fn(compiled), args.repeat)
        tp, out_p = best_of(lambda: fn(python), 1 if name == "train forest" else args.repeat)
        if out_c != out_p:
            print(f"{name}: backends disagree", file=sys.stderr)
            return 2
        print(f"{name:<16}{tc:>12.4f}{tp:>12.4f}{tp / tc:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
