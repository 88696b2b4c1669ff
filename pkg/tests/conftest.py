import numpy as np
import pytest

from selokit import kernels
from selokit.kernels import numpy_impl

try:
    from selokit.kernels import numba_impl
except ImportError:  # pragma: no cover
    numba_impl = None


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # Compile jitted kernels up front so timed tests measure work, not JIT.
    kernels.warmup()


@pytest.fixture(params=["numpy", "numba"])
def backend(request):
    """Both kernel backends; numba skipped where unavailable."""
    if request.param == "numba":
        if numba_impl is None:
            pytest.skip("numba backend unavailable")
        return numba_impl
    return numpy_impl


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
