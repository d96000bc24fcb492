"""Numba backend selection.

Hot kernels ship in two versions: a numba ``@njit`` one and a vectorized
pure-numpy one.  The numpy path is selected when numba is not importable or
when ``IMULOC_NO_NUMBA=1`` is set in the environment (useful for debugging
and for the benchmark that compares both paths).
"""
from __future__ import annotations

import os
import warnings

_FLAG = os.environ.get("IMULOC_NO_NUMBA", "0")

NUMBA_ENABLED = False
if _FLAG not in ("1", "true", "yes"):
    # workqueue is always available; avoids noisy TBB version fallbacks
    os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")
    try:
        from numba import njit, prange  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        warnings.warn("numba not importable, falling back to pure-numpy kernels")

if not NUMBA_ENABLED:
    def njit(*args, **kwargs):  # type: ignore[no-redef]
        """No-op stand-in so kernel modules import cleanly without numba."""
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(func):
            return func

        return wrap

    prange = range  # type: ignore[assignment]


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"
