"""Kernel backend selection.

The hot inner loops (tri-plane gather/scatter, ray compositing, col2im)
exist twice: numba-jitted kernels and pure-numpy fallbacks.  The env var
``SIG_BACKEND`` picks one:

* unset       -> numba if importable, else numpy
* ``numba``   -> require numba, fail loudly if missing
* ``numpy``   -> force the fallbacks

``SIG_THREADS`` caps the numba thread pool (the kernels themselves are
written so results do not depend on thread count).
"""

import os

_VALID = ("numba", "numpy")


def _detect() -> str:
    want = os.environ.get("SIG_BACKEND", "").strip().lower()
    if want and want not in _VALID:
        raise RuntimeError(f"SIG_BACKEND must be one of {_VALID}, got {want!r}")
    if want == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if want == "numba":
            raise RuntimeError("SIG_BACKEND=numba but numba is not importable")
        return "numpy"
    threads = os.environ.get("SIG_THREADS", "").strip()
    if threads:
        import numba

        n = max(1, int(threads))
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    return "numba"


_BACKEND = _detect()


def active_backend() -> str:
    """Name of the kernel backend selected at import time."""
    return _BACKEND


def get_kernels(name: str | None = None):
    """Return the kernel module for `name` (default: the active backend)."""
    name = name or _BACKEND
    if name == "numba":
        from . import kernels_numba

        return kernels_numba
    if name == "numpy":
        from . import kernels_numpy

        return kernels_numpy
    raise ValueError(f"unknown backend {name!r}")
