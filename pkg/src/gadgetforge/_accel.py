"""Backend switch for the numeric kernels.

Kernels come in pairs: a numba ``@njit`` version and a plain numpy version.
``GADGETFORGE_NUMBA=0`` (or numba being absent) selects numpy.
"""
import os

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def numba_enabled() -> bool:
    flag = os.environ.get("GADGETFORGE_NUMBA", "1").strip().lower()
    return HAVE_NUMBA and flag not in ("0", "false", "no", "off")


def njit(*args, **kwargs):
    """``numba.njit`` with caching, or an identity decorator without numba."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def select(nb_fn, np_fn):
    """Pick the kernel for the current backend (evaluated at call time)."""
    return nb_fn if numba_enabled() else np_fn


def backend_name() -> str:
    return "numba" if numba_enabled() else "numpy"
