import numpy as np
import pytest

from tensordefense.harness.sweep import get_model
from tensordefense.model import ToyEncoderConfig


@pytest.fixture(scope="session")
def model():
    return get_model(ToyEncoderConfig())


@pytest.fixture(scope="session")
def small_model():
    # 16x16 images, one block: cheap enough for exhaustive gradient checks
    cfg = ToyEncoderConfig(image_size=16, patch_size=4, depth=1, width=32, heads=2,
                           align_samples=300)
    return get_model(cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
