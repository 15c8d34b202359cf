"""Numba switch.

Set ``MLINK_NUMBA=0`` before import to force the pure-numpy kernels, e.g. for
debugging or on platforms without an LLVM toolchain.
"""
import os

_flag = os.environ.get("MLINK_NUMBA", "1").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional extra
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _flag not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is available, identity decorator otherwise.

    Kernels are always compiled when numba is importable so the benchmark can
    compare both paths; ``USE_NUMBA`` only decides which one callers get.
    """
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
