"""Trajectory prediction for a test depth image.

Candidates come from KNN retrieval in the matching pitch bin; each is
refined by local descent on the occlusion-difference hinge cost, which
charges a predicted point only for occlusion *exceeding* what the
retrieved trajectory tolerated in its own scene.  That keeps paths
through occluded-but-walkable space cheap while pushing paths out of
newly blocked space.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .database import TrainingDatabase, TrainingEntry, depth2d_feature, knn_query
from .egospace import EgoSpaceMap, GridSpec, compute_egospace, sample_phi
from .geometry import (
    DepthImage,
    EgoFrame,
    RansacConfig,
    backproject,
    build_ego_frame,
    fit_ground_plane,
    pitch_angle,
)
from .trajectory import Trajectory, TrajectoryBasis, reconstruct

BASELINE_MODES = ("pure2d", "groundplane2d", "egospace_noopt")


@dataclass(frozen=True)
class PredictionConfig:
    k: int = 10
    max_iters: int = 100
    cost_tol: float = 1e-4
    step_init: float = 0.5
    reg_lambda: float = 0.0
    fd_step: float = 1e-4
    armijo_c: float = 1e-4
    gravity_prior: tuple = (0.0, -1.0, 0.0)
    height_prior: float = 1.6
    ransac: RansacConfig = field(default_factory=RansacConfig)
    use_tree: bool | None = None
    ground_tol: float = 0.1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.cost_tol <= 0:
            raise ValueError("cost_tol must be positive")
        if self.reg_lambda < 0:
            raise ValueError("reg_lambda must be non-negative")


@dataclass
class PredictedTrajectory:
    beta: np.ndarray  # refined coefficients
    beta_init: np.ndarray  # retrieved coefficients
    source_entry: tuple  # (scene_id, frame_id)
    init_cost: float
    final_cost: float
    converged: bool = True
    cost_history: list = field(default_factory=list, repr=False)


def ground_cost(beta: np.ndarray, basis: TrajectoryBasis, emap: EgoSpaceMap) -> float:
    """Summed occlusion height along the reconstructed trajectory."""
    pts = basis.points(np.asarray(beta, dtype=np.float64))
    return float(np.sum(sample_phi(emap, pts[:, 0], pts[:, 1])))


def hinge_cost(beta: np.ndarray, basis: TrajectoryBasis, test_map: EgoSpaceMap,
               entry: TrainingEntry) -> float:
    """Occlusion of the test scene in excess of the retrieved trajectory's
    own occlusion, clamped at zero per time step."""
    if entry.traj_cost.shape[0] != basis.horizon:
        raise ValueError("entry trajectory cost length does not match basis horizon")
    pts = basis.points(np.asarray(beta, dtype=np.float64))
    phi = sample_phi(test_map, pts[:, 0], pts[:, 1])
    return float(np.maximum(0.0, phi - entry.traj_cost).sum())


def refine(beta_init: np.ndarray, basis: TrajectoryBasis, test_map: EgoSpaceMap,
           entry: TrainingEntry, config: PredictionConfig) -> PredictedTrajectory:
    """Local descent on the hinge cost starting from the retrieved beta.

    Central-difference gradients over the coefficients, backtracking
    (Armijo) line search, stop on small decrease or iteration budget.
    The returned final cost never exceeds the initial one.
    """
    beta_init = np.asarray(beta_init, dtype=np.float64)
    ref_cost = entry.traj_cost
    b_mat = basis.basis
    mean = basis.mean
    k = basis.k
    cols = b_mat.T.reshape(k, basis.horizon, 2)

    def points_of(beta):
        return (b_mat @ beta + mean).reshape(-1, 2)

    def hinge_of(pts):
        phi = sample_phi(test_map, pts[..., 0], pts[..., 1])
        return np.maximum(0.0, phi - ref_cost).sum(axis=-1)

    beta = beta_init.copy()
    cur_hinge = float(hinge_of(points_of(beta)))
    init_cost = cur_hinge
    history = [cur_hinge]
    converged = True

    def reg(b):
        d = b - beta_init
        return config.reg_lambda * float(d @ d)

    cur_obj = cur_hinge  # reg is zero at the start
    if cur_hinge > 0.0 and config.max_iters > 0:
        for it in range(config.max_iters):
            base = points_of(beta)
            plus = base[None, :, :] + config.fd_step * cols
            minus = base[None, :, :] - config.fd_step * cols
            grad = (hinge_of(plus) - hinge_of(minus)) / (2.0 * config.fd_step)
            if config.reg_lambda:
                grad = grad + 2.0 * config.reg_lambda * (beta - beta_init)
            gnorm2 = float(grad @ grad)
            if gnorm2 <= 1e-18:
                break  # flat neighborhood; nothing to descend
            step = config.step_init
            accepted = False
            while step > 1e-12:
                cand = beta - step * grad
                cand_hinge = float(hinge_of(points_of(cand)))
                cand_obj = cand_hinge + reg(cand)
                if cand_obj <= cur_obj - config.armijo_c * step * gnorm2:
                    accepted = True
                    break
                step *= 0.5
            if not accepted:
                break
            decrease = cur_obj - cand_obj
            beta, cur_hinge, cur_obj = cand, cand_hinge, cand_obj
            history.append(cur_hinge)
            if cur_hinge <= 0.0 or decrease < config.cost_tol:
                break
        else:
            converged = False

    return PredictedTrajectory(
        beta=beta,
        beta_init=beta_init.copy(),
        source_entry=entry.key(),
        init_cost=init_cost,
        final_cost=cur_hinge,
        converged=converged,
        cost_history=history,
    )


def build_scene(depth: DepthImage, grid_spec: GridSpec, config: PredictionConfig):
    """Fit the ground plane and build the test-time ego frame and map."""
    plane = fit_ground_plane(
        backproject(depth),
        gravity_prior=np.asarray(config.gravity_prior, dtype=np.float64),
        height_prior=config.height_prior,
        config=config.ransac,
    )
    frame = build_ego_frame(plane, np.array([0.0, 0.0, 1.0]))
    emap = compute_egospace(depth, frame, grid_spec, ground_tol=config.ground_tol)
    return frame, emap


def predict(depth: DepthImage, db: TrainingDatabase,
            config: PredictionConfig = PredictionConfig()) -> list:
    """Full pipeline: scene prep, retrieval, refinement.

    Returns k PredictedTrajectory objects ordered by final cost
    ascending (ties by source entry).
    """
    frame, emap = build_scene(depth, db.grid_spec, config)
    return predict_from_scene(frame, emap, db, config)


def predict_from_scene(frame: EgoFrame, emap: EgoSpaceMap, db: TrainingDatabase,
                       config: PredictionConfig) -> list:
    entries = knn_query(db, emap, pitch_angle(frame), config.k, use_tree=config.use_tree)
    preds = [refine(e.beta, db.basis, emap, e, config) for e in entries]
    # stable: equal costs keep their retrieval rank (self-retrieval stays first)
    preds.sort(key=lambda p: p.final_cost)
    return preds


def mean_speed(db: TrainingDatabase) -> float:
    """Average path length per second over the training trajectories."""
    horizon_seconds = db.basis.horizon * db.basis.dt
    lengths = [reconstruct(e.beta, db.basis).path_length() for e in db.entries]
    return float(np.mean(lengths)) / horizon_seconds


def baseline_straight(db: TrainingDatabase, frame: EgoFrame) -> Trajectory:
    """Straight walk along the gaze at the training set's mean speed.

    In ego coordinates the gaze projection is +Z by construction, so the
    frame only fixes the coordinate system the line is expressed in.
    """
    speed = mean_speed(db)
    basis = db.basis
    i = np.arange(1, basis.horizon + 1)
    pts = np.column_stack([np.zeros_like(i, dtype=np.float64), speed * basis.dt * i])
    return Trajectory(points=pts, dt=basis.dt)


def lift_to_ground(traj: Trajectory, frame: EgoFrame) -> Trajectory:
    """Re-express a camera-aligned trajectory on the test ground plane.

    Points are interpreted on the camera's own plane (left-positive
    lateral, gaze forward), rotated into the ego frame, and flattened to
    the ground.
    """
    cam = np.column_stack([
        -traj.points[:, 0],
        np.zeros(traj.horizon),
        traj.points[:, 1],
    ])
    ego = frame.to_ego(cam)
    return Trajectory(points=ego[:, [0, 2]], dt=traj.dt)


def baseline_predict(mode: str, depth: DepthImage, db: TrainingDatabase,
                     config: PredictionConfig = PredictionConfig()) -> list:
    """Prediction-time baselines; see BASELINE_MODES.

    pure2d retrieves on the subsampled depth image and returns the
    stored camera-aligned trajectories untouched; groundplane2d applies
    the same retrieval but re-expresses the trajectories on the test
    image's ground plane; egospace_noopt is the full pipeline with the
    refinement disabled.
    """
    if mode == "egospace_noopt":
        cfg = _replace(config, max_iters=0)
        return [reconstruct(p.beta, db.basis) for p in predict(depth, db, cfg)]
    if mode == "pure2d":
        feature = depth2d_feature(depth, db.grid_spec)
        entries = knn_query(db, feature, 0.0, config.k, use_tree=config.use_tree)
        return [reconstruct(e.beta, db.basis) for e in entries]
    if mode == "groundplane2d":
        feature = depth2d_feature(depth, db.grid_spec)
        entries = knn_query(db, feature, 0.0, config.k, use_tree=config.use_tree)
        plane = fit_ground_plane(
            backproject(depth),
            gravity_prior=np.asarray(config.gravity_prior, dtype=np.float64),
            height_prior=config.height_prior,
            config=config.ransac,
        )
        frame = build_ego_frame(plane, np.array([0.0, 0.0, 1.0]))
        return [lift_to_ground(reconstruct(e.beta, db.basis), frame) for e in entries]
    raise ValueError(f"unknown baseline mode {mode!r}; choose from {BASELINE_MODES}")


def _replace(config: PredictionConfig, **kw) -> PredictionConfig:
    from dataclasses import replace

    return replace(config, **kw)
