import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def mnist_source(tmp_root):
    """Directory with MNIST-style IDX files, or None.

    Uses ``HETSNN_MNIST_DIR`` when set, else converts the digits sample
    bundled with mlxtend (5,000 images) into IDX files under ``tmp_root``.
    """
    env = os.environ.get("HETSNN_MNIST_DIR")
    if env and os.path.isdir(env):
        return env
    try:
        import mlxtend.data
    except ImportError:
        return None
    csv = os.path.join(os.path.dirname(mlxtend.data.__file__), "data", "mnist_5k.csv.gz")
    if not os.path.exists(csv):
        return None
    from hetsnn.envs.idx import csv_to_idx

    out = os.path.join(str(tmp_root), "mnist")
    if not os.path.exists(os.path.join(out, "train-images-idx3-ubyte")):
        csv_to_idx(csv, out)
    return out


@pytest.fixture(scope="session")
def mnist_dir(tmp_path_factory):
    path = mnist_source(tmp_path_factory.mktemp("data"))
    if path is None:
        pytest.skip("no MNIST-style data available (set HETSNN_MNIST_DIR or install mlxtend)")
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(42)
