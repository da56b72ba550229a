"""Backend selection for the hot kernels.

Set ``MINIVLM_NUMBA=0`` to force the pure-numpy fallbacks. The flag is read
once at import time; both implementations stay importable for comparison.
"""
import os

FLAG = "MINIVLM_NUMBA"

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get(FLAG, "1").strip().lower() not in ("0", "false", "no", "off")


def njit(fn):
    if not HAS_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
