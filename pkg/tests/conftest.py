import numpy as np
import pytest

try:
    import threadpoolctl
    # Single-threaded BLAS: faster at these layer sizes and reproducible
    # regardless of the host's core count.
    threadpoolctl.threadpool_limits(1)
except ImportError:
    pass


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
