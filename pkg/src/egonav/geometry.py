"""Depth-image geometry: back-projection, ground-plane fitting, ego frame.

Camera coordinates follow the usual pinhole convention: X right, Y down,
Z along the optical axis.  The ego frame is anchored at the foot point
(eye center projected onto the ground), with Y along the upward plane
normal and Z along the ground projection of the gaze, so a level walk
straight ahead moves along +Z.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateGazeError,
    EmptyDepthError,
    InputFormatError,
    PlaneNotFoundError,
)

EGOD_MAGIC = b"EGOD"
EGOD_VERSION = 1


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass
class DepthImage:
    """Per-pixel z-depth in meters along the optical axis.

    Invalid pixels carry non-positive or non-finite values; ``validity``
    is derived from the stored grid.
    """

    intrinsics: CameraIntrinsics
    depth: np.ndarray  # (height, width) float

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.depth.shape != (self.intrinsics.height, self.intrinsics.width):
            raise ValueError("depth grid does not match intrinsics")

    @property
    def validity(self) -> np.ndarray:
        return np.isfinite(self.depth) & (self.depth > 0)


@dataclass(frozen=True)
class GroundPlane:
    """Plane n.p + d = 0 in camera coordinates, ``normal`` of unit length.

    The normal keeps the orientation of the gravity prior it was fitted
    with; camera height above the plane is ``abs(n.c + d)``.
    """

    normal: np.ndarray
    offset: float

    def camera_height(self) -> float:
        # camera center is the origin of camera coordinates
        return abs(float(self.offset))

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal + self.offset


@dataclass(frozen=True)
class EgoFrame:
    """Rigid map from camera coordinates into the gaze-normalized ego frame.

    ``p_ego = rotation @ p_cam + translation``.  In ego coordinates the
    eye center sits at (0, eye_height, 0) and the gaze is
    (0, gaze[1], gaze[2]) with unit norm.
    """

    eye_height: float
    gaze: np.ndarray  # (3,) unit, zero X component
    rotation: np.ndarray  # (3, 3), camera -> ego
    translation: np.ndarray  # (3,)

    def to_ego(self, points_cam: np.ndarray) -> np.ndarray:
        return np.asarray(points_cam, dtype=np.float64) @ self.rotation.T + self.translation

    def to_camera(self, points_ego: np.ndarray) -> np.ndarray:
        return (np.asarray(points_ego, dtype=np.float64) - self.translation) @ self.rotation


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 500
    inlier_threshold: float = 0.05  # meters
    angle_tol: float = np.deg2rad(15.0)
    height_tol: float = 0.5  # meters
    seed: int = 0
    # candidates are scored on at most this many points (seeded subsample);
    # the winner's inlier set and refit still use every point
    score_points: int = 3000


def backproject(depth: DepthImage) -> np.ndarray:
    """Back-project every valid pixel to a 3D point in camera coordinates.

    Returns an (N, 3) array ordered row-major over the image.  Raises
    EmptyDepthError when no pixel is valid.
    """
    valid = depth.validity
    if not valid.any():
        raise EmptyDepthError("depth image has no valid pixels")
    intr = depth.intrinsics
    v, u = np.nonzero(valid)
    z = depth.depth[v, u]
    x = (u - intr.cx) * z / intr.fx
    y = (v - intr.cy) * z / intr.fy
    return np.column_stack([x, y, z])


def project_to_image(points_cam: np.ndarray, intr: CameraIntrinsics):
    """Project camera-frame points to pixel coordinates.

    Returns (u, v, z).  Points with z <= 0 are behind the camera; callers
    must mask on z before trusting u, v.
    """
    p = np.asarray(points_cam, dtype=np.float64)
    z = p[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * p[..., 0] / z + intr.cx
        v = intr.fy * p[..., 1] / z + intr.cy
    return u, v, z


def in_image(u, v, z, intr: CameraIntrinsics) -> np.ndarray:
    """True where a projected point falls inside the image footprint."""
    return (
        (z > 1e-12)
        & (u >= -0.5)
        & (u < intr.width - 0.5)
        & (v >= -0.5)
        & (v < intr.height - 0.5)
    )


def fit_ground_plane(
    points: np.ndarray,
    gravity_prior: np.ndarray,
    height_prior: float,
    config: RansacConfig = RansacConfig(),
) -> GroundPlane:
    """RANSAC plane fit constrained by gravity and camera-height priors.

    Candidate planes must have a normal within ``angle_tol`` of the prior
    (after flipping to the prior's side) and a camera height
    ``|n.c + d|`` within ``height_tol`` of ``height_prior``.  The best
    candidate by inlier count is refit to its inliers by least squares.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 3:
        raise ValueError("need at least 3 points of shape (N, 3)")
    g = np.asarray(gravity_prior, dtype=np.float64)
    g = g / np.linalg.norm(g)

    rng = np.random.default_rng(config.seed)
    n_pts = pts.shape[0]
    idx = rng.integers(0, n_pts, size=(config.iterations, 3))
    a = pts[idx[:, 0]]
    normals = np.cross(pts[idx[:, 1]] - a, pts[idx[:, 2]] - a)
    norms = np.linalg.norm(normals, axis=1)
    ok = norms > 1e-12
    normals = normals[ok] / norms[ok, None]
    anchors = a[ok]

    # flip every candidate onto the prior's side, then gate on angle
    flip = (normals @ g) < 0
    normals[flip] = -normals[flip]
    cos_tol = np.cos(config.angle_tol)
    ok = (normals @ g) >= cos_tol
    normals, anchors = normals[ok], anchors[ok]

    offsets = -np.einsum("ij,ij->i", normals, anchors)
    ok = np.abs(np.abs(offsets) - height_prior) <= config.height_tol
    normals, offsets = normals[ok], offsets[ok]
    if normals.shape[0] == 0:
        raise PlaneNotFoundError("no plane candidate satisfied the priors")

    if n_pts > config.score_points:
        score_idx = rng.choice(n_pts, size=config.score_points, replace=False)
        score_pts = pts[score_idx]
    else:
        score_pts = pts
    # scoring only ranks candidates; float32 keeps the matmul cheap and the
    # final inlier set below is computed in full precision
    dists = np.abs(
        score_pts.astype(np.float32) @ np.ascontiguousarray(normals.T, dtype=np.float32)
        + offsets.astype(np.float32)
    )
    counts = (dists < config.inlier_threshold).sum(axis=0)
    best = int(np.argmax(counts))  # first max: deterministic tie-break

    inliers = np.abs(pts @ normals[best] + offsets[best]) < config.inlier_threshold
    return _lsq_plane(pts[inliers], g)


def _lsq_plane(pts: np.ndarray, orient_like: np.ndarray) -> GroundPlane:
    centroid = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - centroid, full_matrices=False)
    n = vt[-1]
    if n @ orient_like < 0:
        n = -n
    n = n / np.linalg.norm(n)
    d = -float(n @ centroid)
    return GroundPlane(normal=n, offset=d)


def build_ego_frame(plane: GroundPlane, optical_axis: np.ndarray) -> EgoFrame:
    """Construct the gaze-normalized ego frame from a fitted ground plane.

    The frame's Y-axis is the plane normal pointed toward the camera, Z
    is the unit ground projection of the optical axis, X completes a
    right-handed basis.  Raises DegenerateGazeError when the gaze is
    within 1 degree of the normal.
    """
    axis = np.asarray(optical_axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    n = np.asarray(plane.normal, dtype=np.float64)
    d = float(plane.offset)
    # camera center (origin) must land on the positive side: flip if needed
    if d < 0:
        n, d = -n, -d
    z_raw = axis - (axis @ n) * n
    z_len = np.linalg.norm(z_raw)
    if z_len < np.sin(np.deg2rad(1.0)):
        raise DegenerateGazeError("gaze is parallel to the ground normal")
    z_axis = z_raw / z_len
    y_axis = n
    x_axis = np.cross(y_axis, z_axis)
    rotation = np.vstack([x_axis, y_axis, z_axis])
    translation = np.array([0.0, d, 0.0])
    gaze = rotation @ axis
    gaze[0] = 0.0  # exact by construction; clear rounding residue
    gaze = gaze / np.linalg.norm(gaze)
    return EgoFrame(eye_height=d, gaze=gaze, rotation=rotation, translation=translation)


def pitch_angle(frame: EgoFrame) -> float:
    """Gaze pitch, arccos of the gaze's forward component, in [0, pi]."""
    return float(np.arccos(np.clip(frame.gaze[2], -1.0, 1.0)))


def write_egod(depth: DepthImage, path) -> None:
    """Write a depth image in the EGOD binary format (little-endian).

    Layout: magic "EGOD", u32 version, u32 width, u32 height,
    f32 fx fy cx cy, then width*height f32 depths row-major.  Invalid
    pixels are stored as 0.
    """
    intr = depth.intrinsics
    grid = np.where(depth.validity, depth.depth, 0.0).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(EGOD_MAGIC)
        fh.write(struct.pack("<IIIffff", EGOD_VERSION, intr.width, intr.height,
                             intr.fx, intr.fy, intr.cx, intr.cy))
        fh.write(grid.tobytes())


def read_egod(path) -> DepthImage:
    """Read an EGOD depth file; see write_egod for the layout."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != EGOD_MAGIC:
        raise InputFormatError(f"{path}: bad magic, not an EGOD file")
    try:
        version, width, height, fx, fy, cx, cy = struct.unpack_from("<IIIffff", blob, 4)
    except struct.error as exc:
        raise InputFormatError(f"{path}: truncated header") from exc
    if version != EGOD_VERSION:
        raise InputFormatError(f"{path}: unsupported EGOD version {version}")
    expected = 4 + struct.calcsize("<IIIffff") + 4 * width * height
    if len(blob) != expected:
        raise InputFormatError(f"{path}: size {len(blob)} != expected {expected}")
    grid = np.frombuffer(blob, dtype="<f4", offset=expected - 4 * width * height)
    depth = grid.reshape(height, width).astype(np.float64)
    intr = CameraIntrinsics(fx=fx, fy=fy, cx=cx, cy=cy, width=width, height=height)
    return DepthImage(intrinsics=intr, depth=depth)
