import numpy as np
import pytest

from viewplan.geom import SlicePose


@pytest.fixture
def rng():
    return np.random.default_rng(20260808)


def axial_pose(spacing=1.0, cols=10, rows=10, origin=(0.0, 0.0, 0.0), thickness=6.0):
    return SlicePose(origin, (1.0, 0.0, 0.0), (0.0, 1.0, 0.0),
                     spacing, spacing, cols, rows, thickness)


def random_pose(rng, cols=32, rows=24, spacing=(1.5, 1.5), thickness=6.0, origin_scale=50.0):
    """A pose with a uniformly random orthonormal frame."""
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 2] = -q[:, 2]
    origin = rng.uniform(-origin_scale, origin_scale, size=3)
    return SlicePose(origin, q[:, 0], q[:, 1], spacing[0], spacing[1], cols, rows, thickness)
