"""Backend selection for the compiled kernels.

Set ``ALCFCN_DISABLE_NUMBA=1`` before import to force the pure-numpy path.
"""
import os

_DISABLED = os.environ.get("ALCFCN_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError
    import numba

    USE_NUMBA = True

    def njit(fn):
        return numba.njit(cache=True, nogil=True)(fn)

except ImportError:
    USE_NUMBA = False

    def njit(fn):
        return fn


def backend():
    return "numba" if USE_NUMBA else "numpy"
