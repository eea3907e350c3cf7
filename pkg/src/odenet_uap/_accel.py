"""Backend switch between numba-compiled kernels and the pure-numpy path.

Set ``ODENET_UAP_DISABLE_NUMBA=1`` (or have numba missing) to run every
kernel through numpy.  The flag is read once at import time.
"""
import os

_FLAG = os.environ.get("ODENET_UAP_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG in ("1", "true", "yes", "on")

try:
    from numba import njit as _njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not DISABLED_BY_ENV


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise.

    Compilation still happens when the env flag is set, so the benchmark can
    compare both paths in one process; the flag only changes dispatch.
    """
    kwargs.setdefault("cache", True)
    if not HAS_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return _njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
