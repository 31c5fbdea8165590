import numpy as np
import pytest

from egotrack.geometry import Pose, Quaternion


def random_quaternion(rng) -> Quaternion:
    v = rng.normal(size=4)
    return Quaternion(*v).normalized()


def random_pose(rng, trans_scale: float = 1.0) -> Pose:
    return Pose(random_quaternion(rng), rng.uniform(-trans_scale, trans_scale, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
