"""Optional numba acceleration.

Hot loops are written once as plain Python over numpy arrays and wrapped with
:func:`njit`.  Setting ``SWNT_KUBO_DISABLE_NUMBA=1`` (or running without numba
installed) replaces the decorator with a no-op, and callers that have a
vectorized numpy variant switch to it via :data:`USE_NUMBA`.
"""
import os

_DISABLED = os.environ.get("SWNT_KUBO_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError
    import numba as _nb

    USE_NUMBA = True
except ImportError:
    _nb = None
    USE_NUMBA = False


def njit(*args, **kwargs):
    if USE_NUMBA:
        return _nb.njit(*args, cache=True, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrapper(func):
        return func

    return wrapper


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
