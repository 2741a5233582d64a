"""Select numba-compiled kernels or their interpreted numpy twins.

Set ``SIGREC_DISABLE_NUMBA=1`` before import to run every kernel as plain
Python/numpy. The compiled dispatchers keep the original function on
``.py_func``, which the benchmark uses to time both paths in one process.
"""

import os

_disabled = os.environ.get("SIGREC_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    USE_NUMBA = True
except ImportError:
    _njit = None
    USE_NUMBA = False


def jit(func):
    if USE_NUMBA:
        return _njit(cache=True, nogil=True)(func)
    func.py_func = func
    return func


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
