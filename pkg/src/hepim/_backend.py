"""Kernel backend selection.

Hot loops are written twice: a numba ``@njit`` version and a pure-numpy
fallback. ``HEPIM_BACKEND=numpy`` forces the fallback; the default is numba
when it imports cleanly.
"""

import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def backend() -> str:
    """Name of the backend chosen by the environment: ``'numba'`` or ``'numpy'``."""
    requested = os.environ.get("HEPIM_BACKEND", "numba").strip().lower()
    if requested not in ("numba", "numpy"):
        raise ValueError(f"HEPIM_BACKEND must be 'numba' or 'numpy', got {requested!r}")
    if requested == "numba" and not HAVE_NUMBA:
        return "numpy"
    return requested


def njit(*args, **kwargs):
    """``numba.njit`` with caching on, or an identity decorator without numba."""
    if not HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def pick(numba_impl, numpy_impl, which=None):
    which = which or backend()
    return numba_impl if which == "numba" else numpy_impl
