"""Quantitative evaluation: spatiotemporal precision, detection rate,
reconstruction-error curves, and gaze/destination statistics.

Precision counts a test frame as a hit when at least one predicted
trajectory stays within epsilon of the ground truth at every compared
time step of a window; it is spatiotemporal because distances are taken
at matching time indices, not between curves.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .database import TrainingDatabase, depth2d_feature, knn_query
from .discovery import (
    DEFAULT_EXTENT,
    DEFAULT_RESOLUTION,
    DEFAULT_SIGMA,
    DEFAULT_THRESHOLD,
    discover,
    extract_detections,
)
from .egospace import EgoSpaceMap, GridSpec
from .geometry import DepthImage, EgoFrame, pitch_angle
from .predictor import (
    PredictionConfig,
    baseline_straight,
    build_scene,
    lift_to_ground,
    predict_from_scene,
)
from .trajectory import Trajectory, learn_pca_basis, make_dct_basis, reconstruct

METHOD_NAMES = ("straight", "pure2d", "groundplane2d", "egospace_noopt", "egospace_opt")


@dataclass(frozen=True)
class PrecisionConfig:
    epsilon: float = 1.5
    horizon_windows: tuple = ((0.0, 5.0), (5.0, 10.0), (10.0, 15.0))
    k_values: tuple = (30, 60, 100)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        prev_end = -np.inf
        for a, b in self.horizon_windows:
            if not a < b or a < prev_end:
                raise ValueError("windows must be disjoint and ordered")
            prev_end = b


def window_label(window) -> str:
    return f"{window[0]:g}-{window[1]:g}s"


def window_indices(window, dt: float, horizon: int) -> np.ndarray:
    """1-based time indices i with window[0] < i*dt <= window[1]."""
    a, b = window
    i = np.arange(1, horizon + 1)
    sel = i[(i * dt > a + 1e-12) & (i * dt <= b + 1e-12)]
    if sel.size == 0 or sel[-1] > horizon:
        raise ValueError(f"window {window} outside the horizon")
    return sel


def trajectory_hit(predictions, ground_truth: Trajectory, window, epsilon: float) -> bool:
    """True when some prediction's worst per-step distance in the window
    beats epsilon (strict inequality)."""
    idx = window_indices(window, ground_truth.dt, ground_truth.horizon) - 1
    gt = ground_truth.points[idx]
    for pred in predictions:
        if pred.dt != ground_truth.dt:
            raise ValueError("prediction dt does not match ground truth")
        if pred.horizon < ground_truth.horizon:
            raise ValueError("prediction horizon shorter than ground truth")
        worst = np.linalg.norm(pred.points[idx] - gt, axis=1).max()
        if worst < epsilon:
            return True
    return False


def precision(test_set, method, config: PrecisionConfig) -> dict:
    """Mean hit rate of ``method`` over the test set.

    ``method`` maps a test case to an ordered prediction list; the list
    is truncated to each k in turn.  Returns
    {window_label: {k: value}}.
    """
    if not test_set:
        raise ValueError("test set is empty")
    totals = {window_label(w): {k: 0 for k in config.k_values}
              for w in config.horizon_windows}
    for case in test_set:
        preds = method(case)
        if not preds:
            continue
        gt = case.ground_truth
        dists = np.array([
            np.linalg.norm(p.points[: gt.horizon] - gt.points, axis=1) for p in preds
        ])
        for w in config.horizon_windows:
            idx = window_indices(w, gt.dt, gt.horizon) - 1
            worst = dists[:, idx].max(axis=1)
            for k in config.k_values:
                if worst[:k].size and worst[:k].min() < config.epsilon:
                    totals[window_label(w)][k] += 1
    n = len(test_set)
    return {w: {k: v / n for k, v in per_k.items()} for w, per_k in totals.items()}


def detection_rate(detections, oracle_labels: np.ndarray):
    """True-positive fraction of the detections, or None when there are
    no detections to grade (undefined, distinct from 0).

    A detection is a true positive when at least half of its cells are
    labeled occluded-and-free by the oracle.
    """
    if len(detections) == 0:
        return None
    tp = 0
    for det in detections:
        hits = oracle_labels[det.cells[:, 0], det.cells[:, 1]]
        if hits.mean() >= 0.5:
            tp += 1
    return tp / len(detections)


def reconstruction_curve(trajectories, basis_type: str, k_range) -> dict:
    """Pooled per-point RMS reconstruction error for each basis size."""
    trajs = list(trajectories)
    if basis_type not in ("pca", "dct"):
        raise ValueError("basis_type must be 'pca' or 'dct'")
    horizon, dt = trajs[0].horizon, trajs[0].dt
    stack = np.array([t.as_vector() for t in trajs])
    out = {}
    for k in k_range:
        if basis_type == "pca":
            basis = learn_pca_basis(trajs, k)
        else:
            basis = make_dct_basis(horizon, k, dt)
        centered = stack - basis.mean
        recon = centered @ basis.basis @ basis.basis.T + basis.mean
        sse = float(((stack - recon) ** 2).sum())
        out[k] = float(np.sqrt(sse / (len(trajs) * horizon)))
    return out


@dataclass
class GazeStats:
    yaw_edges: np.ndarray  # degrees
    pitch_edges: np.ndarray  # degrees
    hist2d: np.ndarray  # (n_pitch, n_yaw)
    per_bin: dict  # pitch bin -> yaw histogram counts

    def mode_yaw_deg(self, pitch_bin: int) -> float:
        counts = self.per_bin[pitch_bin]
        centers = 0.5 * (self.yaw_edges[:-1] + self.yaw_edges[1:])
        return float(centers[int(np.argmax(counts))])


def gaze_destination_stats(db: TrainingDatabase, horizon_seconds: float = 10.0) -> GazeStats:
    """Destination-direction statistics of the training corpus.

    Destination yaw is the bearing atan2(x, z) of the trajectory point
    at ``horizon_seconds``; histograms use 5-degree bins, jointly over
    pitch and per stored pitch bin.
    """
    basis = db.basis
    t_idx = int(round(horizon_seconds / basis.dt))
    if not 1 <= t_idx <= basis.horizon:
        raise ValueError("horizon_seconds outside the trajectory horizon")
    yaw = np.empty(len(db.entries))
    pitch = np.empty(len(db.entries))
    bins = np.empty(len(db.entries), dtype=int)
    for i, e in enumerate(db.entries):
        pt = basis.points(e.beta)[t_idx - 1]
        yaw[i] = np.degrees(np.arctan2(pt[0], pt[1]))
        pitch[i] = np.degrees(e.pitch)
        bins[i] = e.pitch_bin
    yaw_edges = np.arange(-180.0, 180.0 + 5.0, 5.0)
    p_hi = max(5.0, np.ceil(pitch.max() / 5.0) * 5.0) if pitch.size else 5.0
    pitch_edges = np.arange(0.0, p_hi + 5.0, 5.0)
    hist2d, _, _ = np.histogram2d(pitch, yaw, bins=[pitch_edges, yaw_edges])
    per_bin = {}
    for b in range(3):
        counts, _ = np.histogram(yaw[bins == b], bins=yaw_edges)
        per_bin[b] = counts
    return GazeStats(yaw_edges=yaw_edges, pitch_edges=pitch_edges,
                     hist2d=hist2d, per_bin=per_bin)


# ---------------------------------------------------------------------------
# five-method evaluation engine

@dataclass
class EvalCase:
    depth: DepthImage
    ground_truth: Trajectory
    gravity_prior: np.ndarray
    height_prior: float
    scene_id: int
    frame_id: int
    template: str = ""
    pose: object = None  # synthworld.CameraPose, for oracle labels
    world: object = None  # synthworld.World


@dataclass
class ScenePrep:
    frame: EgoFrame
    emap: EgoSpaceMap
    depth_feature: np.ndarray
    pitch: float


def prepare_case(case: EvalCase, grid_spec: GridSpec, config: PredictionConfig) -> ScenePrep:
    cfg = _with_priors(config, case)
    frame, emap = build_scene(case.depth, grid_spec, cfg)
    return ScenePrep(frame=frame, emap=emap,
                     depth_feature=depth2d_feature(case.depth, grid_spec),
                     pitch=pitch_angle(frame))


def _with_priors(config: PredictionConfig, case: EvalCase) -> PredictionConfig:
    from dataclasses import replace

    return replace(config, gravity_prior=tuple(case.gravity_prior),
                   height_prior=float(case.height_prior))


def make_methods(db: TrainingDatabase, db2d: TrainingDatabase,
                 config: PredictionConfig, preps: dict):
    """Callables case -> ordered trajectory list for the five methods.

    ``preps`` maps (scene_id, frame_id) to the case's ScenePrep so the
    expensive scene setup is shared across methods.
    """
    from dataclasses import replace

    def prep_of(case):
        return preps[(case.scene_id, case.frame_id)]

    def straight(case):
        return [baseline_straight(db, prep_of(case).frame)]

    def pure2d(case):
        entries = knn_query(db2d, prep_of(case).depth_feature, 0.0, config.k,
                            use_tree=config.use_tree)
        return [reconstruct(e.beta, db2d.basis) for e in entries]

    def groundplane2d(case):
        prep = prep_of(case)
        entries = knn_query(db2d, prep.depth_feature, 0.0, config.k,
                            use_tree=config.use_tree)
        return [lift_to_ground(reconstruct(e.beta, db2d.basis), prep.frame)
                for e in entries]

    def noopt(case):
        prep = prep_of(case)
        preds = predict_from_scene(prep.frame, prep.emap, db,
                                   replace(config, max_iters=0))
        return [reconstruct(p.beta, db.basis) for p in preds]

    def full(case):
        prep = prep_of(case)
        preds = predict_from_scene(prep.frame, prep.emap, db, config)
        return [reconstruct(p.beta, db.basis) for p in preds]

    return {
        "straight": straight,
        "pure2d": pure2d,
        "groundplane2d": groundplane2d,
        "egospace_noopt": noopt,
        "egospace_opt": full,
    }


@dataclass
class EvalReport:
    precision: dict  # method -> window label -> k -> value
    detection: dict = field(default_factory=dict)  # scene/template -> rate or None
    detail: dict = field(default_factory=dict)

    def to_json(self) -> str:
        obj = {
            "precision": {
                m: {w: {str(k): v for k, v in per_k.items()} for w, per_k in per_w.items()}
                for m, per_w in self.precision.items()
            },
            "detection_rate": {
                key: (val if val is not None else "undefined")
                for key, val in self.detection.items()
            },
            "detail": self.detail,
        }
        return json.dumps(obj, indent=2, sort_keys=True)

    def precision_csv(self, config: PrecisionConfig) -> str:
        labels = [window_label(w) for w in config.horizon_windows]
        header = ["method"] + [f"{w} k={k}" for w in labels for k in config.k_values]
        lines = [",".join(header)]
        for method, per_w in self.precision.items():
            row = [method]
            for w in labels:
                for k in config.k_values:
                    row.append("%.4f" % per_w[w][k])
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def detection_csv(self) -> str:
        lines = ["scene,detection_rate"]
        for key, val in self.detection.items():
            lines.append(f"{key},{'%.4f' % val if val is not None else 'undefined'}")
        return "\n".join(lines) + "\n"


def run_eval(
    cases,
    db: TrainingDatabase,
    db2d: TrainingDatabase,
    pred_config: PredictionConfig,
    prec_config: PrecisionConfig,
    with_oracle: bool = False,
    with_detections: bool = True,
    detection_threshold: float = DEFAULT_THRESHOLD,
    extent=DEFAULT_EXTENT,
    resolution: float = DEFAULT_RESOLUTION,
    sigma: float = DEFAULT_SIGMA,
) -> EvalReport:
    """Evaluate all methods over the test cases.

    Precision is computed per method, window, and k; when cases carry
    their world and pose, occluded-space detections from the full
    method are graded against the analytic oracle, pooled per template.
    """
    from .synthworld import oracle_occluded_free

    from dataclasses import replace

    max_k = max(prec_config.k_values)
    config = replace(pred_config, k=max_k)
    preps = {}
    for case in cases:
        preps[(case.scene_id, case.frame_id)] = prepare_case(case, db.grid_spec, config)

    methods = make_methods(db, db2d, config, preps)
    if with_oracle:
        methods = {"oracle": lambda case: [case.ground_truth], **methods}

    report_precision = {}
    detect_tp: dict = {}
    detect_n: dict = {}
    for name, method in methods.items():
        report_precision[name] = precision(cases, method, prec_config)

    if with_detections:
        for case in cases:
            if case.world is None or case.pose is None:
                continue
            prep = preps[(case.scene_id, case.frame_id)]
            preds = predict_from_scene(prep.frame, prep.emap, db, config)
            omap = discover(preds, db.basis, prep.emap, extent=extent,
                            resolution=resolution, sigma=sigma)
            dets = extract_detections(omap, threshold=detection_threshold)
            labels = oracle_occluded_free(case.world, case.pose, extent, resolution)
            key = case.template or str(case.scene_id)
            detect_n[key] = detect_n.get(key, 0) + len(dets)
            rate = detection_rate(dets, labels)
            if rate is not None:
                detect_tp[key] = detect_tp.get(key, 0) + rate * len(dets)

    detection = {}
    for key, n in sorted(detect_n.items()):
        detection[key] = (detect_tp.get(key, 0.0) / n) if n > 0 else None
    return EvalReport(precision=report_precision, detection=detection)
