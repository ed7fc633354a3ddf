import zlib

import numpy as np
import pytest

from hets import context as C
from hets import nn

TEST_SEED = 1234
MNIST_SEED = 4242


@pytest.fixture(scope="session")
def ctx():
    """Real test-4096 context with power-of-two rotation keys."""
    return C.create_context("test-4096", seed=TEST_SEED)


@pytest.fixture(scope="session")
def mock_ctx():
    return C.create_context("test-4096", seed=TEST_SEED, backend="mock")


@pytest.fixture(scope="session")
def model():
    return nn.load_fixture_model()


@pytest.fixture(scope="session")
def images():
    return nn.load_fixture_images()


@pytest.fixture(scope="session")
def mnist_ctx(model):
    return C.create_context("mnist-8192", seed=MNIST_SEED, workload=model)


@pytest.fixture(scope="session")
def mnist_mock(model):
    return C.create_context("mnist-8192", seed=MNIST_SEED, workload=model, backend="mock")


@pytest.fixture
def rng(request):
    # Stable per-test stream so failures reproduce.
    return np.random.default_rng(zlib.crc32(request.node.name.encode()))


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_results(request):
    """criterion number -> PASS/FAIL line, printed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(ACCEPTANCE, {})
    if results:
        terminalreporter.section("acceptance criteria")
        for number in sorted(results):
            terminalreporter.write_line(results[number])
