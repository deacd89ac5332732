"""Egocentric trajectory forecasting and occluded-space discovery from a
single depth image, with a synthetic world simulator as test oracle."""

__version__ = "0.1.0"

from .egospace import EgoSpaceMap, GridSpec, compute_egospace, sample_phi
from .geometry import (
    CameraIntrinsics,
    DepthImage,
    EgoFrame,
    GroundPlane,
    RansacConfig,
    backproject,
    build_ego_frame,
    fit_ground_plane,
    pitch_angle,
    read_egod,
    write_egod,
)
from .trajectory import (
    Trajectory,
    TrajectoryBasis,
    ego_project_future,
    fit_coefficients,
    learn_pca_basis,
    make_dct_basis,
    point_at,
    reconstruct,
)

__all__ = [
    "__version__",
    "CameraIntrinsics",
    "DepthImage",
    "EgoFrame",
    "EgoSpaceMap",
    "GridSpec",
    "GroundPlane",
    "RansacConfig",
    "Trajectory",
    "TrajectoryBasis",
    "backproject",
    "build_ego_frame",
    "compute_egospace",
    "ego_project_future",
    "fit_coefficients",
    "fit_ground_plane",
    "learn_pca_basis",
    "make_dct_basis",
    "pitch_angle",
    "point_at",
    "read_egod",
    "reconstruct",
    "sample_phi",
    "write_egod",
]
