"""Kernel compilation switch.

The hot inner loops (max-flow, Dijkstra, distance transform, labeling) are
written as plain functions over numpy arrays and compiled with numba by
default. Setting ``CLICKSEG_KERNELS=numpy`` (or running without numba
installed) keeps the same bodies as the uncompiled numpy/Python fallback.
"""

import os

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False

KERNEL_MODE = os.environ.get("CLICKSEG_KERNELS", "numba" if _HAVE_NUMBA else "numpy").lower()
if KERNEL_MODE not in ("numba", "numpy"):
    raise ValueError("CLICKSEG_KERNELS must be 'numba' or 'numpy', got %r" % KERNEL_MODE)
if KERNEL_MODE == "numba" and not _HAVE_NUMBA:
    KERNEL_MODE = "numpy"

USE_NUMBA = KERNEL_MODE == "numba"


def jit(fn):
    """Compile ``fn`` with numba in the default mode, pass through otherwise."""
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return fn
