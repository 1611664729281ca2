"""Optional numba acceleration.

Set ``CONSTEL_DISABLE_NUMBA=1`` to run every kernel through its pure
Python/numpy path. The flag is read once, at import time.
"""
import os

_disabled = os.environ.get("CONSTEL_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit
    USE_NUMBA = True
except ImportError:
    USE_NUMBA = False


def jit(fn):
    """njit ``fn`` when numba is enabled; the plain function stays reachable as ``.py_func``."""
    if USE_NUMBA:
        return _njit(cache=True, nogil=True)(fn)
    fn.py_func = fn
    return fn
