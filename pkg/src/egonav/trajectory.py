"""Ego-frame future trajectories and their compact linear subspace.

A trajectory of F future ground positions is flattened to the vector
[x1 z1 ... xF zF] and modeled as mean + basis @ beta with a
column-orthonormal basis, learned by PCA or built from low-frequency
DCT vectors for comparison.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import HorizonError, RankDeficientWarning
from .geometry import EgoFrame


@dataclass
class Trajectory:
    points: np.ndarray  # (F, 2) ego-frame (x, z) meters, ordered by time
    dt: float

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 2 or self.points.shape[0] < 2:
            raise ValueError("trajectory needs at least 2 (x, z) points")
        if not np.isfinite(self.points).all():
            raise ValueError("trajectory coordinates must be finite")

    @property
    def horizon(self) -> int:
        return self.points.shape[0]

    def as_vector(self) -> np.ndarray:
        return self.points.ravel().copy()

    @classmethod
    def from_vector(cls, vec: np.ndarray, dt: float) -> "Trajectory":
        return cls(points=np.asarray(vec, dtype=np.float64).reshape(-1, 2), dt=dt)

    def path_length(self) -> float:
        """Polyline length including the implicit start at the foot (0, 0)."""
        deltas = np.diff(np.vstack([[0.0, 0.0], self.points]), axis=0)
        return float(np.linalg.norm(deltas, axis=1).sum())

    def to_json(self) -> str:
        return json.dumps({"dt": self.dt, "points": self.points.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        obj = json.loads(text)
        return cls(points=np.array(obj["points"], dtype=np.float64), dt=float(obj["dt"]))


@dataclass
class TrajectoryBasis:
    mean: np.ndarray  # (2F,)
    basis: np.ndarray  # (2F, K), column-orthonormal
    horizon: int  # F
    dt: float
    explained_variance_ratio: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.basis = np.asarray(self.basis, dtype=np.float64)
        if self.mean.shape != (2 * self.horizon,):
            raise ValueError("mean length must be 2F")
        if self.basis.shape[0] != 2 * self.horizon:
            raise ValueError("basis rows must be 2F")

    @property
    def k(self) -> int:
        return self.basis.shape[1]

    def points(self, beta: np.ndarray) -> np.ndarray:
        """Reconstructed trajectory as an (F, 2) array."""
        vec = self.basis @ np.asarray(beta, dtype=np.float64) + self.mean
        return vec.reshape(-1, 2)


def ego_project_future(camera_poses, f: int, horizon: int, frame_f: EgoFrame,
                       dt: float) -> Trajectory:
    """Project the next ``horizon`` camera centers into frame f's ego plane.

    Poses must expose ``position`` (world) and ``rotation`` (world ->
    camera).  Future centers are expressed in frame f's camera
    coordinates, mapped into its ego frame, and flattened to the ground
    (the ego Y coordinate is dropped).
    """
    if f + horizon >= len(camera_poses):
        raise HorizonError(
            f"frame {f} needs {horizon} future poses, have {len(camera_poses) - f - 1}"
        )
    ref = camera_poses[f]
    future = np.array([camera_poses[f + i].position for i in range(1, horizon + 1)])
    cam = (future - ref.position) @ ref.rotation.T
    ego = frame_f.to_ego(cam)
    return Trajectory(points=ego[:, [0, 2]], dt=dt)


def camera_xz_future(camera_poses, f: int, horizon: int, dt: float) -> Trajectory:
    """Future camera centers dropped onto frame f's camera plane.

    The ground-plane-free flattening used by the subsampled-depth
    baselines: no ego frame, just the camera's own forward and lateral
    axes.  Lateral is left-positive to match the ego-frame X axis, so
    for a level camera this coincides with the ego projection.
    """
    if f + horizon >= len(camera_poses):
        raise HorizonError(
            f"frame {f} needs {horizon} future poses, have {len(camera_poses) - f - 1}"
        )
    ref = camera_poses[f]
    future = np.array([camera_poses[f + i].position for i in range(1, horizon + 1)])
    cam = (future - ref.position) @ ref.rotation.T
    return Trajectory(points=np.column_stack([-cam[:, 0], cam[:, 2]]), dt=dt)


def learn_pca_basis(trajectories, k: int) -> TrajectoryBasis:
    """Top-k principal directions of the flattened trajectory stack.

    Requires at least k+1 trajectories with identical horizon and dt.
    If the centered stack has rank below k the basis is truncated to the
    rank and a RankDeficientWarning is issued.
    """
    trajs = list(trajectories)
    if len(trajs) < k + 1:
        raise ValueError(f"need at least {k + 1} trajectories for k={k}")
    horizon = trajs[0].horizon
    dt = trajs[0].dt
    for t in trajs:
        if t.horizon != horizon or t.dt != dt:
            raise ValueError("trajectories must share horizon and dt")

    stack = np.array([t.as_vector() for t in trajs])
    mean = stack.mean(axis=0)
    centered = stack - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    total = float((s**2).sum())
    rank = int((s > max(s[0], 1e-300) * 1e-10).sum()) if s.size else 0
    k_eff = min(k, rank)
    if k_eff < k:
        warnings.warn(
            f"training data rank {rank} below requested k={k}; basis truncated",
            RankDeficientWarning,
        )
    basis = vt[:k_eff].T.copy()
    basis = _canonical_signs(basis)
    ratios = (s[:k_eff] ** 2 / total) if total > 0 else np.zeros(k_eff)
    return TrajectoryBasis(mean=mean, basis=basis, horizon=horizon, dt=dt,
                           explained_variance_ratio=ratios)


def _canonical_signs(basis: np.ndarray) -> np.ndarray:
    for j in range(basis.shape[1]):
        col = basis[:, j]
        lead = int(np.argmax(np.abs(col)))
        if col[lead] < 0:
            basis[:, j] = -col
    return basis


def make_dct_basis(horizon: int, k: int, dt: float = 0.5) -> TrajectoryBasis:
    """Generic basis: the k/2 lowest DCT-II frequencies per coordinate.

    Columns are ordered frequency-major (x then z per frequency), the
    mean trajectory is zero.  k must be even and at most 2F.
    """
    if k % 2 != 0:
        raise ValueError("k must be even (half per coordinate channel)")
    if not 0 < k <= 2 * horizon:
        raise ValueError("k must be in (0, 2F]")
    f = horizon
    i = np.arange(f)
    basis = np.zeros((2 * f, k))
    for freq in range(k // 2):
        vec = np.cos(np.pi * (2 * i + 1) * freq / (2 * f))
        vec *= np.sqrt(1.0 / f) if freq == 0 else np.sqrt(2.0 / f)
        basis[0::2, 2 * freq] = vec
        basis[1::2, 2 * freq + 1] = vec
    return TrajectoryBasis(mean=np.zeros(2 * f), basis=basis, horizon=f, dt=dt)


def fit_coefficients(traj: Trajectory, basis: TrajectoryBasis) -> np.ndarray:
    """Least-squares coefficients beta = B.T (X - mean) under orthonormal B."""
    if traj.horizon != basis.horizon:
        raise ValueError("trajectory horizon does not match basis")
    return basis.basis.T @ (traj.as_vector() - basis.mean)


def reconstruct(beta: np.ndarray, basis: TrajectoryBasis) -> Trajectory:
    """Trajectory mean + basis @ beta, reshaped to F points."""
    beta = np.asarray(beta, dtype=np.float64)
    if beta.shape != (basis.k,):
        raise ValueError(f"beta must have length {basis.k}")
    return Trajectory(points=basis.points(beta), dt=basis.dt)


def point_at(beta: np.ndarray, basis: TrajectoryBasis, i: int):
    """Ground position (x, z) at the i-th future time instant (1-based)."""
    if not 1 <= i <= basis.horizon:
        raise IndexError(f"time index {i} outside [1, {basis.horizon}]")
    row = 2 * (i - 1)
    vec = basis.basis[row:row + 2] @ np.asarray(beta, dtype=np.float64) + basis.mean[row:row + 2]
    return float(vec[0]), float(vec[1])
