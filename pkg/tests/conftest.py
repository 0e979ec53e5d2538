import os
from pathlib import Path

import pytest

from drbn.core.math_core import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def mnist_dir() -> Path:
    root = os.getenv("DRBN_MNIST_DIR")
    if not root or not Path(root).is_dir():
        pytest.skip("DRBN_MNIST_DIR not set")
    return Path(root)
