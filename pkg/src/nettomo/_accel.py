"""Numba switch.

Set ``NETTOMO_DISABLE_NUMBA=1`` before import to run every kernel through its
pure-numpy implementation instead of the compiled one.
"""
import os

DISABLE_ENV = "NETTOMO_DISABLE_NUMBA"


def _numba_requested():
    return os.environ.get(DISABLE_ENV, "").strip().lower() not in ("1", "true", "yes", "on")


try:
    if not _numba_requested():
        raise ImportError("numba disabled by " + DISABLE_ENV)
    from numba import njit  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap
