"""Kernel acceleration switch.

Hot loops are written once as plain Python and compiled with ``numba.njit``
unless ``LEVYLAB_DISABLE_NUMBA`` is set to a truthy value (or numba is not
importable). In the disabled mode batch simulation runs through the
vectorised numpy backend instead.
"""
from __future__ import annotations

import os

DISABLE_ENV = "LEVYLAB_DISABLE_NUMBA"

_disabled = os.environ.get(DISABLE_ENV, "").strip().lower() not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    import numba

    NUMBA_ENABLED = True
except ImportError:
    numba = None
    NUMBA_ENABLED = False


def jit(fn=None, *, no_alloc: bool = False):
    """``numba.njit`` with caching, or the identity when numba is off.

    ``no_alloc=True`` is for helpers that only read and write arrays they are
    given. They are compiled without the reference-counting runtime, since
    the incref/decref pair on every array argument otherwise costs more than
    a whole drift evaluation.
    """
    if fn is None:
        return lambda f: jit(f, no_alloc=no_alloc)
    if NUMBA_ENABLED:
        if no_alloc:
            return numba.njit(nogil=True, _nrt=False)(fn)
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def default_backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"


def resolve_backend(backend: str | None) -> str:
    if backend is None:
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not NUMBA_ENABLED:
        raise RuntimeError(f"numba backend requested but disabled ({DISABLE_ENV} set or numba missing)")
    return backend
