"""Numba availability and the switch between compiled and pure-numpy kernels.

Set ``SLEEPGEOM_DISABLE_NUMBA=1`` before importing :mod:`sleepgeom` to force
the numpy fallback everywhere.  Both paths are always importable so tests and
benchmarks can call them side by side.
"""

from __future__ import annotations

import os
import warnings

_FLAG = "SLEEPGEOM_DISABLE_NUMBA"

# an outdated system TBB only disables that threading layer; numba falls back on its own
warnings.filterwarnings("ignore", message="The TBB threading layer requires TBB")

try:
    from numba import njit, prange

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def decorator(func):
            return func

        return decorator

    def prange(*args):
        return range(*args)


def _flag_set() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = NUMBA_AVAILABLE and not _flag_set()

__all__ = ["NUMBA_AVAILABLE", "USE_NUMBA", "njit", "prange"]
