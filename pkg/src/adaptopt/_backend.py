"""Kernel backend selection.

The hot kernels exist twice: an explicit-loop version compiled with
``numba.njit`` and a vectorized pure-numpy version. ``ADAPTOPT_BACKEND``
picks one at import time (``numba`` or ``numpy``); the default is numba
when it imports cleanly.
"""

import os
import warnings

_requested = os.environ.get("ADAPTOPT_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(
        f"ADAPTOPT_BACKEND must be 'numba' or 'numpy', got {_requested!r}"
    )

HAS_NUMBA = False
if _requested == "numba":
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        warnings.warn("numba unavailable, falling back to the numpy kernels")

BACKEND = "numba" if HAS_NUMBA else "numpy"

if not HAS_NUMBA:

    def njit(*args, **kwargs):  # noqa: D103
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn
