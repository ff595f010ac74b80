"""Backend selection for the hot loops.

Set ``BTCNN_DISABLE_NUMBA=1`` to force the pure-numpy kernels. If numba is
not importable the numpy path is used regardless.
"""
import os

_FLAG = os.environ.get("BTCNN_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _FLAG in {"1", "true", "yes", "on"}

try:
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False
    _njit = None

USE_NUMBA = HAVE_NUMBA and not DISABLED_BY_ENV
BACKEND = "numba" if USE_NUMBA else "numpy"


def njit(fn):
    """``numba.njit(cache=True)`` when numba is installed, identity otherwise."""
    if not HAVE_NUMBA:
        return fn
    return _njit(cache=True, nogil=True)(fn)
