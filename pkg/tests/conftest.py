import os
import tempfile

import numpy as np
import pytest

# Keep test logs out of the package directory; must be set before glmd is imported.
os.environ.setdefault("GLMD_LOG_DIR", tempfile.mkdtemp(prefix="glmd-test-logs-"))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow Monte-Carlo tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long Monte-Carlo acceptance run (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_instance(rng, family, n=None, p=None, scale=0.5):
    """A small random (Dataset, beta) pair with responses drawn from *family*."""

    from glmd.glm_core import Dataset, FamilyKind

    n = n or int(rng.integers(8, 33))
    p = p or int(rng.integers(1, 5))
    z = scale * rng.standard_normal((n, p))
    beta = scale * rng.standard_normal(p)
    mean = family.h(z @ beta)
    if family.kind is FamilyKind.POISSON:
        y = rng.poisson(mean).astype(float)
    else:
        y = (rng.random(n) < mean).astype(float)
    return Dataset(z, y), beta
