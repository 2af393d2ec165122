"""Numba switch.

Set ``SLFV_DISABLE_NUMBA=1`` before import to run every hot kernel through its
pure-numpy implementation instead of the jitted loop.
"""
from __future__ import annotations

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_DISABLED_BY_ENV = os.environ.get("SLFV_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")
HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED_BY_ENV


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise.

    The jitted variant is always built when numba exists so the benchmark can
    compare both paths regardless of the env flag.
    """
    if numba is None:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    return numba.njit(*args, **kwargs)
