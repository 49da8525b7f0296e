"""Kernel backend selection.

The compiled extension is used when importable; ``CRXGUARD_PURE_PYTHON=1``
forces the numpy fallback (the benchmark and parity tests use both).
"""

from __future__ import annotations

import os

from crxguard import _pykernels

python_kernels = _pykernels

try:
    from crxguard import _ckernels as compiled_kernels
except ImportError:  # extension not built
    compiled_kernels = None

if compiled_kernels is not None and os.environ.get("CRXGUARD_PURE_PYTHON", "") in ("", "0"):
    kernels = compiled_kernels
    BACKEND = "cython"
else:
    kernels = _pykernels
    BACKEND = "python"
