"""Backend switch for the compiled kernels.

Set ``WGEIT_DISABLE_NUMBA=1`` to force the pure-numpy code paths. When numba
is missing the numpy paths are used automatically.
"""

import os

_FLAG = os.environ.get("WGEIT_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG in ("1", "true", "yes", "on")

try:
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _njit = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and not DISABLED_BY_ENV


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity otherwise.

    The compiled functions are always defined (so tests can compare backends);
    whether they are *used* by default is governed by ``USE_NUMBA``.
    """
    if _njit is None:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _njit(*args, **kwargs)


def default_backend():
    return "numba" if USE_NUMBA else "numpy"


def check_backend(backend):
    if backend is None:
        return default_backend()
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}; expected 'numba' or 'numpy'")
    if backend == "numba" and not NUMBA_AVAILABLE:
        raise RuntimeError("numba backend requested but numba is not installed")
    return backend


def set_threads(n):
    """Bound internal parallelism (numba thread pool) to ``n`` threads."""
    if n is None:
        return
    n = int(n)
    if n < 1:
        raise ValueError("thread count must be >= 1")
    if NUMBA_AVAILABLE:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
