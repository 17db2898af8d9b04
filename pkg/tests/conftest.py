import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from bpc.data import gen_blobs  # noqa: E402
from bpc.energy import EnergySpec  # noqa: E402
from bpc.models import ModelSpec  # noqa: E402
from bpc.trajectory import Buffer, TrainConfig, record_trajectory  # noqa: E402

settings.register_profile("bpc", deadline=None, max_examples=50, derandomize=True)
settings.load_profile("bpc")

# tiny instances of every architecture, used by the gradient checks
TINY_SPECS = {
    "mlp": ((3,), (5,)),
    "mlp-deep": ((3,), (4, 3, 4)),
    "convnet-small": ((1, 4, 4), (2, 2)),
    "convnet-wide": ((2, 4, 4), (3, 2)),
}
ENERGY_KINDS = ("cross_entropy", "focal", "multi_margin")


def tiny_spec(kind, n_classes=3):
    shape, widths = TINY_SPECS[kind]
    return ModelSpec(kind, shape, n_classes, widths)


@pytest.fixture(scope="session")
def blobs3():
    return gen_blobs(60, n_classes=3, dim=2, seed=0)


@pytest.fixture(scope="session")
def small_spec():
    return ModelSpec("mlp", (2,), 3, (8,))


@pytest.fixture(scope="session")
def small_buffer(tmp_path_factory, blobs3, small_spec):
    """Four short trajectories on the 3-class blobs."""
    buf = Buffer(str(tmp_path_factory.mktemp("buffer")))
    cfg = TrainConfig(epochs=6, batch_size=32)
    for i in range(4):
        buf.save(record_trajectory(blobs3, small_spec, EnergySpec(), cfg, seed=i), f"traj{i:04d}")
    return buf


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
