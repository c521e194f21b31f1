import os
from pathlib import Path

import numpy as np
import pytest

from partial_em.data_io import EXAMPLE1, load_idx, sample_mixture, write_idx

MNIST_DIGITS = (1, 2, 4, 5, 6)


@pytest.fixture(scope="session")
def example1():
    return sample_mixture(EXAMPLE1, 1000, seed=7)


@pytest.fixture
def two_blobs():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(50, 2)) * 0.3 + [-10.0, -10.0]
    b = rng.normal(size=(50, 2)) * 0.3 + [10.0, 10.0]
    return np.vstack([a, b])


@pytest.fixture(scope="session")
def mnist_idx_files(tmp_path_factory):
    """MNIST training IDX files.

    Taken from ``$PARTIAL_EM_MNIST_DIR`` when it holds the official files,
    otherwise written from the 5000-digit MNIST sample bundled with mlxtend.
    """
    root = os.environ.get("PARTIAL_EM_MNIST_DIR")
    if root:
        for suffix in ("", ".gz"):
            images = Path(root) / f"train-images-idx3-ubyte{suffix}"
            if images.exists():
                return images, Path(root) / f"train-labels-idx1-ubyte{suffix}"
        pytest.fail(f"no train-images-idx3-ubyte[.gz] in {root}")
    try:
        from mlxtend.data import mnist_data
    except ImportError:
        pytest.fail("MNIST data needs mlxtend (pip install mlxtend) or PARTIAL_EM_MNIST_DIR")
    pixels, labels = mnist_data()
    root = tmp_path_factory.mktemp("mnist")
    images_path = root / "train-images-idx3-ubyte"
    labels_path = root / "train-labels-idx1-ubyte"
    write_idx(images_path, pixels.astype(np.uint8).reshape(-1, 28, 28))
    write_idx(labels_path, labels.astype(np.uint8))
    return images_path, labels_path


@pytest.fixture(scope="session")
def mnist_digits(mnist_idx_files):
    return load_idx(*mnist_idx_files, keep_digits=set(MNIST_DIGITS))


ACCEPTANCE_RESULTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
