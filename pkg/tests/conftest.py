import os
import sys

import numpy as np
import pytest

# Allow running from a fresh checkout without installing (the compiled
# kernel backend is optional; the numpy fallback covers this path).
try:
    import spikeformer  # noqa: F401
except ImportError:  # pragma: no cover
    sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from spikeformer import tensor as T


@pytest.fixture(autouse=True)
def _clean_tape():
    T.clear_tape()
    yield
    T.clear_tape()


@pytest.fixture
def f64():
    """Run the test under the double-precision oracle profile."""
    with T.using_dtype(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
