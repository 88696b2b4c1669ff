"""Hot raster kernels with a numba backend and a pure-numpy fallback.

The backend is chosen once at import time from the ``SELO_KERNELS``
environment variable:

* ``auto`` (default): numba when importable, else numpy
* ``numba``: require the jitted backend, fail loudly if unavailable
* ``numpy``: force the pure-numpy fallback

Both backends implement the same four operations with identical results:
``median_filter_2d``, ``window_max_mask``, ``accumulate_tiles``, and
``polygon_cover_mask``. See ``benchmarks/bench_kernels.py`` for a
side-by-side timing comparison.
"""

from __future__ import annotations

import logging
import os

from . import numpy_impl

log = logging.getLogger(__name__)

_VALID = ("auto", "numba", "numpy")


def _load_backend():
    choice = os.environ.get("SELO_KERNELS", "auto").lower()
    if choice not in _VALID:
        raise ValueError(
            f"SELO_KERNELS must be one of {_VALID}, got {choice!r}"
        )
    if choice == "numpy":
        return numpy_impl, "numpy"
    try:
        from . import numba_impl
    except ImportError as exc:
        if choice == "numba":
            raise ImportError(
                "SELO_KERNELS=numba but the numba backend failed to import"
            ) from exc
        log.warning("numba unavailable (%s); using pure-numpy kernels", exc)
        return numpy_impl, "numpy"
    return numba_impl, "numba"


_impl, _name = _load_backend()

median_filter_2d = _impl.median_filter_2d
window_max_mask = _impl.window_max_mask
accumulate_tiles = _impl.accumulate_tiles
polygon_cover_mask = _impl.polygon_cover_mask


def backend_name() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return _name


def warmup() -> None:
    """Precompile jitted kernels; a no-op on the numpy backend."""
    if _name == "numba":
        _impl.warmup()
