"""Backend selection for the hot kernels.

Every kernel in :mod:`shrinklab.kernels` exists twice: a loop version
compiled with numba and a vectorised pure-numpy version.  Which one runs
is decided here.  Set ``SHRINKLAB_DISABLE_NUMBA=1`` in the environment
(or leave numba uninstalled) to force the numpy path.
"""

import os

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

_FALSEY = {"", "0", "false", "no", "off"}

_backend = "numba" if HAS_NUMBA else "numpy"
if os.environ.get("SHRINKLAB_DISABLE_NUMBA", "").strip().lower() not in _FALSEY:
    _backend = "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache=True``; identity decorator without numba."""
    if not HAS_NUMBA:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return numba.njit(*args, **kwargs)


def get_backend():
    return _backend


def set_backend(name):
    """Switch backends at runtime (tests and benchmarks use this)."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba is not installed")
    _backend = name


class use_backend:
    """Context manager that temporarily selects a backend."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        self._saved = get_backend()
        set_backend(self.name)
        return self

    def __exit__(self, *exc):
        set_backend(self._saved)
        return False
