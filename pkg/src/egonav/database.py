"""Training database: pitch-binned (map feature, trajectory coefficient) pairs.

Retrieval is exact k-nearest-neighbor over flattened map features.  The
linear scan is the reference implementation; a k-d tree (scipy) can be
toggled on and is wrapped so its results match the scan exactly,
including the deterministic (distance, scene, frame) tie-break.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .egospace import EgoSpaceMap, GridSpec, compute_egospace, sample_phi
from .errors import EmptyPitchBinError, InputFormatError, ShortBinWarning
from .geometry import (
    DepthImage,
    RansacConfig,
    backproject,
    build_ego_frame,
    fit_ground_plane,
    pitch_angle,
)
from .trajectory import (
    TrajectoryBasis,
    camera_xz_future,
    ego_project_future,
    fit_coefficients,
    learn_pca_basis,
    point_at,
)

EGDB_MAGIC = b"EGDB"
EGDB_VERSION = 1

FEATURE_EGOSPACE = "egospace"
FEATURE_DEPTH2D = "depth2d"

# how many entries a bin needs before the k-d tree outruns a linear scan
TREE_THRESHOLD = 50_000


@dataclass
class TrainingEntry:
    scene_id: int
    frame_id: int
    pitch_bin: int
    pitch: float
    feature: np.ndarray  # flattened map grid (n_radius * n_theta,)
    beta: np.ndarray  # (K,)
    traj_cost: np.ndarray  # (F,) occlusion heights along the entry's own path

    def key(self):
        return (self.scene_id, self.frame_id)


@dataclass
class TrainingDatabase:
    grid_spec: GridSpec
    basis: TrajectoryBasis
    pitch_edges: np.ndarray  # (2,)
    entries: list  # sorted by (scene_id, frame_id)
    feature_mode: str = FEATURE_EGOSPACE
    _bins: dict = field(default_factory=dict, repr=False)
    _trees: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.pitch_edges = np.asarray(self.pitch_edges, dtype=np.float64)
        self.entries = sorted(self.entries, key=lambda e: e.key())
        self._bins = {}
        for b in range(3):
            idx = [e for e in self.entries if e.pitch_bin == b]
            self._bins[b] = {
                "entries": idx,
                "features": np.array([e.feature for e in idx]) if idx else np.empty((0, 0)),
            }
        self._trees = {}

    def __len__(self):
        return len(self.entries)

    def bin_entries(self, pitch_bin: int):
        return self._bins[pitch_bin]["entries"]


def assign_pitch_bin(pitch: float, edges) -> int:
    """Bin index by half-open intervals (-inf, e0), [e0, e1), [e1, inf)."""
    e0, e1 = float(edges[0]), float(edges[1])
    if pitch < e0:
        return 0
    if pitch < e1:
        return 1
    return 2


def depth2d_feature(depth: DepthImage, spec: GridSpec) -> np.ndarray:
    """Depth image subsampled to the map resolution; invalid pixels read 0."""
    intr = depth.intrinsics
    rows = np.linspace(0, intr.height - 1, spec.n_radius).round().astype(int)
    cols = np.linspace(0, intr.width - 1, spec.n_theta).round().astype(int)
    grid = depth.depth[np.ix_(rows, cols)]
    valid = np.isfinite(grid) & (grid > 0)
    return np.where(valid, grid, 0.0).ravel()


@dataclass
class SequenceData:
    """One (depth, pose) stream with its scene identifier."""

    scene_id: int
    depths: list  # list[DepthImage]
    poses: list  # list[CameraPose]

    def __len__(self):
        return len(self.depths)


def build_database(
    sequences,
    grid_spec: GridSpec,
    k: int,
    horizon: int,
    dt: float,
    feature_mode: str = FEATURE_EGOSPACE,
    pitch_bins: int = 3,
    ransac: RansacConfig = RansacConfig(),
    ground_tol: float = 0.1,
) -> TrainingDatabase:
    """Assemble the training database from (depth, pose) streams.

    Per usable frame: fit the ground plane (gravity/height priors from
    the pose), build the ego frame and map feature, project the next
    ``horizon`` camera centers, and record pitch.  The trajectory basis
    is learned from the full projected corpus first; coefficients and
    per-entry occlusion costs are fitted afterwards.  Entries are sorted
    by (scene, frame) regardless of build order.
    """
    if feature_mode not in (FEATURE_EGOSPACE, FEATURE_DEPTH2D):
        raise ValueError(f"unknown feature mode {feature_mode!r}")

    records = []
    trajectories = []
    for seq in sequences:
        n = len(seq)
        for f in range(n - horizon):
            depth = seq.depths[f]
            pose = seq.poses[f]
            plane = fit_ground_plane(
                backproject(depth),
                gravity_prior=pose.gravity_in_camera(),
                height_prior=float(pose.position[1]),
                config=ransac,
            )
            frame = build_ego_frame(plane, np.array([0.0, 0.0, 1.0]))
            pitch = pitch_angle(frame)
            if feature_mode == FEATURE_EGOSPACE:
                emap = compute_egospace(depth, frame, grid_spec, ground_tol=ground_tol)
                feature = emap.feature()
                traj = ego_project_future(seq.poses, f, horizon, frame, dt)
            else:
                emap = None
                feature = depth2d_feature(depth, grid_spec)
                traj = camera_xz_future(seq.poses, f, horizon, dt)
            records.append((seq.scene_id, f, pitch, feature, emap))
            trajectories.append(traj)

    basis = learn_pca_basis(trajectories, k)

    pitches = np.array([rec[2] for rec in records])
    if pitch_bins == 3:
        edges = np.quantile(pitches, [1.0 / 3.0, 2.0 / 3.0])
    elif pitch_bins == 1:
        edges = np.array([np.inf, np.inf])
    else:
        raise ValueError("pitch_bins must be 1 or 3")

    entries = []
    for (scene_id, frame_id, pitch, feature, emap), traj in zip(records, trajectories):
        beta = fit_coefficients(traj, basis)
        if emap is not None:
            pts = basis.points(beta)
            cost = sample_phi(emap, pts[:, 0], pts[:, 1])
        else:
            cost = np.zeros(horizon)
        entries.append(TrainingEntry(
            scene_id=scene_id,
            frame_id=frame_id,
            pitch_bin=assign_pitch_bin(pitch, edges),
            pitch=float(pitch),
            feature=feature,
            beta=beta,
            traj_cost=np.asarray(cost, dtype=np.float64),
        ))
    return TrainingDatabase(grid_spec=grid_spec, basis=basis, pitch_edges=edges,
                            entries=entries, feature_mode=feature_mode)


def knn_query(
    db: TrainingDatabase,
    query: EgoSpaceMap | np.ndarray,
    pitch: float,
    k: int,
    use_tree: bool | None = None,
) -> list:
    """The k nearest entries in the query's pitch bin, nearest first.

    Distance is unweighted Euclidean over the flattened features (masked
    cells carry phi_max, so the FOV shape participates in matching).
    Ties break deterministically by (scene_id, frame_id).  If the bin
    holds fewer than k entries, all of them are returned with a warning.
    """
    feature = query.feature() if isinstance(query, EgoSpaceMap) else np.asarray(query, dtype=np.float64)
    b = assign_pitch_bin(pitch, db.pitch_edges)
    bucket = db._bins[b]
    entries = bucket["entries"]
    if not entries:
        raise EmptyPitchBinError(f"pitch bin {b} holds no entries")
    if len(entries) < k:
        warnings.warn(
            f"bin {b} holds {len(entries)} entries, fewer than k={k}", ShortBinWarning
        )
        k = len(entries)
    if use_tree is None:
        use_tree = len(entries) >= TREE_THRESHOLD
    if use_tree:
        idx = _tree_candidates(db, b, feature, k)
    else:
        idx = np.arange(len(entries))
    dists = _distances(bucket["features"][idx], feature)
    ranked = sorted(
        zip(dists, (entries[i] for i in idx)),
        key=lambda pair: (pair[0], pair[1].scene_id, pair[1].frame_id),
    )
    return [e for _, e in ranked[:k]]


def _distances(features: np.ndarray, query: np.ndarray) -> np.ndarray:
    diff = features - query[None, :]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def _tree_candidates(db: TrainingDatabase, b: int, feature: np.ndarray, k: int):
    """Candidate indices from the k-d tree, guaranteed to contain the true
    top-k under the shared distance/tie-break rules.

    The tree's k-th distance bounds the search radius; everything within
    a slightly inflated ball is returned and re-ranked by the same code
    path as the linear scan, so the two routes agree exactly.
    """
    if b not in db._trees:
        db._trees[b] = cKDTree(db._bins[b]["features"])
    tree = db._trees[b]
    d, _ = tree.query(feature, k=k)
    d_k = float(np.atleast_1d(d)[-1])
    radius = d_k * (1.0 + 1e-9) + 1e-12
    return np.array(sorted(tree.query_ball_point(feature, radius)), dtype=int)


# ---------------------------------------------------------------------------
# EGDB serialization

_HEADER = "<IIIfffffIIf"  # version, nTheta, nRadius, thetaMin, thetaMax, rMin, rMax, phiMax, F, K, dt
_ENTRY_FIXED = "<IIBf"  # sceneId, frameId, pitchBin, pitch


def save_database(db: TrainingDatabase, path) -> None:
    """Write the database in the EGDB binary format (little-endian).

    Layout: magic "EGDB", header (version, grid spec, F, K, dt), basis
    mean then columns as f32, two f32 pitch edges, u32 entry count, then
    packed entries (scene u32, frame u32, bin u8, pitch f32, feature,
    beta, trajCost as f32 runs).
    """
    spec = db.grid_spec
    basis = db.basis
    out = bytearray()
    out += EGDB_MAGIC
    out += struct.pack(
        _HEADER, EGDB_VERSION, spec.n_theta, spec.n_radius, spec.theta_min,
        spec.theta_max, spec.r_min, spec.r_max, spec.phi_max,
        basis.horizon, basis.k, basis.dt,
    )
    out += basis.mean.astype("<f4").tobytes()
    out += basis.basis.T.astype("<f4").tobytes()  # column by column
    out += db.pitch_edges.astype("<f4").tobytes()
    out += struct.pack("<I", len(db.entries))
    for e in db.entries:
        out += struct.pack(_ENTRY_FIXED, e.scene_id, e.frame_id, e.pitch_bin, e.pitch)
        out += e.feature.astype("<f4").tobytes()
        out += e.beta.astype("<f4").tobytes()
        out += e.traj_cost.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_database(path, feature_mode: str = FEATURE_EGOSPACE) -> TrainingDatabase:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != EGDB_MAGIC:
        raise InputFormatError(f"{path}: bad magic, not an EGDB file")
    off = 4
    try:
        (version, n_theta, n_radius, theta_min, theta_max, r_min, r_max,
         phi_max, horizon, k, dt) = struct.unpack_from(_HEADER, blob, off)
    except struct.error as exc:
        raise InputFormatError(f"{path}: truncated header") from exc
    if version != EGDB_VERSION:
        raise InputFormatError(f"{path}: unsupported EGDB version {version}")
    off += struct.calcsize(_HEADER)
    spec = GridSpec(n_theta=n_theta, n_radius=n_radius, theta_min=theta_min,
                    theta_max=theta_max, r_min=r_min, r_max=r_max, phi_max=phi_max)

    def take_f32(count):
        nonlocal off
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=off).astype(np.float64)
        off += 4 * count
        return arr

    mean = take_f32(2 * horizon)
    cols = take_f32(2 * horizon * k).reshape(k, 2 * horizon).T.copy()
    basis = TrajectoryBasis(mean=mean, basis=cols, horizon=horizon, dt=dt)
    edges = take_f32(2)
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    feat_len = n_radius * n_theta
    entries = []
    fixed = struct.calcsize(_ENTRY_FIXED)
    for _ in range(count):
        scene_id, frame_id, pitch_bin, pitch = struct.unpack_from(_ENTRY_FIXED, blob, off)
        off += fixed
        feature = take_f32(feat_len)
        beta = take_f32(k)
        cost = take_f32(horizon)
        entries.append(TrainingEntry(
            scene_id=scene_id, frame_id=frame_id, pitch_bin=pitch_bin,
            pitch=pitch, feature=feature, beta=beta, traj_cost=cost,
        ))
    if off != len(blob):
        raise InputFormatError(f"{path}: {len(blob) - off} trailing bytes")
    return TrainingDatabase(grid_spec=spec, basis=basis, pitch_edges=edges,
                            entries=entries, feature_mode=feature_mode)
