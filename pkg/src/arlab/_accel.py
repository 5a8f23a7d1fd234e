"""Backend switch for the numeric kernels.

Set ``ARLAB_DISABLE_NUMBA=1`` before import to force the pure-numpy path.
When numba is missing the numpy path is used regardless.
"""

import os

_DISABLED = os.environ.get("ARLAB_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:  # pragma: no cover - depends on environment
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None

NUMBA_AVAILABLE = _numba is not None
USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED

njit_kwargs = {"cache": True, "nogil": True}


def njit(func):
    """Compile ``func`` with numba when available, otherwise return it untouched.

    The undecorated function stays importable through ``func.py_func`` in the
    numba case, so tests can exercise the loop body in either mode.
    """
    if not NUMBA_AVAILABLE:
        return func
    return _numba.njit(**njit_kwargs)(func)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
