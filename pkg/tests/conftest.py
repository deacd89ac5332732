import numpy as np
import pytest

from egonav.geometry import CameraIntrinsics
from egonav.synthworld import (
    MotionParams,
    World,
    make_box,
    pose_from_yaw_pitch,
    render_depth,
)


@pytest.fixture
def intr():
    # 160x120 wide-angle pinhole used throughout the synthetic experiments
    return CameraIntrinsics(fx=70.0, fy=70.0, cx=79.5, cy=59.5, width=160, height=120)


@pytest.fixture
def empty_world():
    return World(boxes=[], bounds=(-15.0, 15.0, -10.0, 30.0), seed=0, template="open")


@pytest.fixture
def box_world():
    # 1 m tall box straight ahead, free floor on both sides
    return World(boxes=[make_box(-0.75, 0.75, 3.0, 4.0, 1.0)],
                 bounds=(-15.0, 15.0, -10.0, 30.0), seed=0, template="single-box")


@pytest.fixture
def level_pose():
    return pose_from_yaw_pitch((0.0, 1.6, 0.0), 0.0, 0.0)


@pytest.fixture
def pitched_pose():
    return pose_from_yaw_pitch((0.0, 1.6, 0.0), 0.0, 0.2)


@pytest.fixture
def motion():
    return MotionParams(speed=(1.0, 1.2))


def render(world, pose, intr):
    return render_depth(world, pose, intr)
