"""Command-line pipeline: synth, train, predict, eval, bases.

Every command resolves its configuration (flags > config file >
defaults), runs deterministically under --seed, and writes a manifest
recording the resolved values next to its outputs.  Exit codes: 0 on
success, 2 for input/generation problems, 3 for geometry failures,
4 for an empty database bin.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .database import (
    FEATURE_DEPTH2D,
    FEATURE_EGOSPACE,
    SequenceData,
    build_database,
    load_database,
    save_database,
)
from .discovery import (
    DEFAULT_EXTENT,
    DEFAULT_RESOLUTION,
    DEFAULT_SIGMA,
    DEFAULT_THRESHOLD,
    detections_to_json,
    discover,
    extract_detections,
    write_psi_csv,
    write_psi_pgm,
)
from .egospace import GridSpec
from .errors import (
    DegenerateGazeError,
    EgoNavError,
    EmptyDepthError,
    EmptyPitchBinError,
    InputFormatError,
    PlaneNotFoundError,
)
from .evalharness import (
    EvalCase,
    PrecisionConfig,
    reconstruction_curve,
    run_eval,
)
from .geometry import CameraIntrinsics, read_egod, write_egod
from .predictor import PredictionConfig, predict
from .synthworld import (
    MotionParams,
    TEMPLATES,
    WorldParams,
    camera_poses,
    generate_world,
    pose_from_yaw_pitch,
    render_depth,
    sample_route,
    simulate_route,
    true_ego_frame,
    world_from_json,
    world_to_json,
)
from .trajectory import ego_project_future

# named randomness sub-streams: adding a consumer never perturbs the others
STREAM_WORLD = 0
STREAM_ROUTE = 1
STREAM_AGENT = 2
STREAM_NOISE = 3
STREAM_HEIGHT = 4


def _rng(seed: int, stream: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream, index]))


def parse_config_file(path) -> dict:
    """Flat TOML-style key = value pairs; comments with '#'."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputFormatError(f"{path}:{lineno}: expected key = value")
        key, val = line.split("=", 1)
        out[key.strip().replace("-", "_")] = _parse_value(val.strip())
    return out


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "'\"":
        return text[1:-1]
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace,
                    inputs, outputs, started: float, name="manifest.json") -> None:
    resolved = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": command,
        "config": resolved,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "seed": resolved.get("seed"),
        "version": __version__,
        "wall_time_s": round(time.monotonic() - started, 3),
    }
    (out_dir / name).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str))


def _grid_spec(args) -> GridSpec:
    return GridSpec(n_theta=args.n_theta, n_radius=args.n_radius,
                    theta_min=args.theta_min, theta_max=args.theta_max,
                    r_min=args.r_min, r_max=args.r_max, phi_max=args.phi_max)


def _intrinsics(args) -> CameraIntrinsics:
    return CameraIntrinsics(fx=args.fx, fy=args.fy, cx=args.width / 2.0 - 0.5,
                            cy=args.height / 2.0 - 0.5, width=args.width,
                            height=args.height)


def _int_list(text: str):
    return [int(v) for v in str(text).split(",") if v != ""]


def _float_list(text: str):
    return [float(v) for v in str(text).split(",") if v != ""]


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    started = time.monotonic()
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    intr = _intrinsics(args)
    motion = MotionParams(speed=tuple(_float_list(args.speed)), dt=args.dt)
    templates = list(TEMPLATES) if args.template == "mixed" else [args.template]

    outputs = []
    seq_index = 0
    for w in range(args.worlds):
        template = templates[w % len(templates)]
        world_seed = int(_rng(args.seed, STREAM_WORLD, w).integers(0, 2**31 - 1))
        world = generate_world(WorldParams(template=template), seed=world_seed)
        for _ in range(args.sequences):
            seq_dir = out_dir / f"seq{seq_index:03d}"
            seq_dir.mkdir(exist_ok=True)
            path = _build_walk(world, motion, args.frames, args.seed, seq_index)
            cam_height = float(_rng(args.seed, STREAM_HEIGHT, seq_index).uniform(1.55, 1.70))
            poses = camera_poses(path, cam_height)[: args.frames]
            noise_rng = _rng(args.seed, STREAM_NOISE, seq_index)

            (seq_dir / "world.json").write_text(world_to_json(world))
            frames_meta = []
            for i, pose in enumerate(poses):
                depth = render_depth(world, pose, intr)
                if args.depth_noise_sigma > 0:
                    noise = noise_rng.normal(0.0, args.depth_noise_sigma, depth.depth.shape)
                    depth.depth = np.where(depth.validity,
                                           np.maximum(depth.depth + noise, 1e-3), 0.0)
                depth_path = seq_dir / f"frame{i:04d}.egod"
                write_egod(depth, depth_path)
                frames_meta.append({
                    "position": pose.position.tolist(),
                    "yaw": float(path.headings[i]),
                    "pitch": float(path.pitches[i]),
                })
            poses_obj = {"dt": motion.dt, "camera_height": cam_height, "frames": frames_meta}
            (seq_dir / "poses.json").write_text(json.dumps(poses_obj, indent=2, sort_keys=True))
            outputs.append(seq_dir)
            seq_index += 1
    _write_manifest(out_dir, "synth", args, [], outputs, started)
    return 0


def _build_walk(world, motion: MotionParams, frames: int, seed: int, seq_index: int):
    """Sample routes until the constant-speed walk covers enough frames."""
    route_rng = _rng(seed, STREAM_ROUTE, seq_index)
    min_length = frames * motion.dt * motion.speed[1] * 1.2
    stops = sample_route(world, route_rng, motion, min_length=min_length)
    for attempt in range(12):
        agent_seed = int(_rng(seed, STREAM_AGENT, seq_index).integers(0, 2**31 - 1)) + attempt
        path = simulate_route(world, stops, motion, seed=agent_seed)
        if len(path) >= frames:
            path.positions = path.positions[:frames]
            path.headings = path.headings[:frames]
            path.pitches = path.pitches[:frames]
            return path
        stops = stops + [_far_free_point(world, route_rng, motion, stops[-1])]
    raise EgoNavError(f"sequence {seq_index}: could not build a walk of {frames} frames")


def _far_free_point(world, rng, motion: MotionParams, last):
    x0, x1, z0, z1 = world.bounds
    for _ in range(300):
        p = np.array([rng.uniform(x0 + 2, x1 - 2), rng.uniform(z0 + 2, z1 - 2)])
        if (world.clearance(p[0], p[1]) >= motion.agent_radius + 0.2
                and np.linalg.norm(p - last) > 8.0):
            return p
    raise EgoNavError("no free extension point found")


# ---------------------------------------------------------------------------
# dataset loading shared by train / eval / bases

def load_sequences(data_dir) -> list:
    data_dir = Path(data_dir)
    seq_dirs = sorted(d for d in data_dir.iterdir() if d.is_dir() and d.name.startswith("seq"))
    if not seq_dirs:
        raise InputFormatError(f"{data_dir}: no seq*/ directories found")
    sequences = []
    for scene_id, seq_dir in enumerate(seq_dirs):
        poses_obj = json.loads((seq_dir / "poses.json").read_text())
        cam_height = poses_obj["camera_height"]
        poses = [
            pose_from_yaw_pitch(f["position"], f["yaw"], f["pitch"])
            for f in poses_obj["frames"]
        ]
        depth_files = sorted(seq_dir.glob("frame*.egod"))
        if len(depth_files) != len(poses):
            raise InputFormatError(f"{seq_dir}: {len(depth_files)} depth files "
                                   f"vs {len(poses)} poses")
        depths = [read_egod(p) for p in depth_files]
        world_file = seq_dir / "world.json"
        world = world_from_json(world_file.read_text()) if world_file.exists() else None
        seq = SequenceData(scene_id=scene_id, depths=depths, poses=poses)
        seq.world = world
        seq.dt = float(poses_obj["dt"])
        seq.cam_height = cam_height
        sequences.append(seq)
    return sequences


# ---------------------------------------------------------------------------
# train

def cmd_train(args) -> int:
    started = time.monotonic()
    sequences = load_sequences(args.data)
    dt = sequences[0].dt
    spec = _grid_spec(args)
    feature = FEATURE_DEPTH2D if args.feature == "depth2d" else FEATURE_EGOSPACE
    db = build_database(sequences, spec, k=args.k, horizon=args.horizon, dt=dt,
                        feature_mode=feature, pitch_bins=args.pitch_bins)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_database(db, out)
    evr = db.basis.explained_variance_ratio
    if evr is not None:
        print("explained variance ratios:", " ".join("%.4f" % v for v in evr))
    print(f"database: {len(db)} entries, K={db.basis.k}, F={db.basis.horizon}, dt={db.basis.dt}")
    _write_manifest(out.parent, "train", args, [args.data], [out], started,
                    name=out.name + ".manifest.json")
    return 0


# ---------------------------------------------------------------------------
# predict

def cmd_predict(args) -> int:
    started = time.monotonic()
    db = load_database(args.db)
    depth = read_egod(args.depth)
    config = PredictionConfig(
        k=args.k, max_iters=args.max_iters, cost_tol=args.cost_tol,
        step_init=args.step_init, reg_lambda=args.reg_lambda,
        gravity_prior=tuple(_float_list(args.gravity)),
        height_prior=args.height_prior,
    )
    preds = predict(depth, db, config)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    candidates = [
        {
            "source_entry": list(p.source_entry),
            "init_cost": p.init_cost,
            "final_cost": p.final_cost,
            "converged": p.converged,
            "beta": p.beta.tolist(),
            "points": db.basis.points(p.beta).tolist(),
        }
        for p in preds
    ]
    traj_obj = {"dt": db.basis.dt, "k": len(preds), "candidates": candidates}
    (out_dir / "trajectories.json").write_text(json.dumps(traj_obj, indent=2, sort_keys=True))

    # rebuild the scene once more for the psi export
    from .predictor import build_scene

    _, emap = build_scene(depth, db.grid_spec, config)
    extent = tuple(_float_list(args.extent))
    omap = discover(preds, db.basis, emap, extent=extent,
                    resolution=args.resolution, sigma=args.sigma)
    write_psi_csv(omap, out_dir / "psi.csv")
    write_psi_pgm(omap, out_dir / "psi.pgm")
    dets = extract_detections(omap, threshold=args.threshold)
    (out_dir / "detections.json").write_text(detections_to_json(dets))
    _write_manifest(out_dir, "predict", args, [args.db, args.depth],
                    [out_dir / "trajectories.json", out_dir / "psi.csv",
                     out_dir / "psi.pgm", out_dir / "detections.json"], started)
    return 0


# ---------------------------------------------------------------------------
# eval

def build_eval_cases(sequences, horizon: int) -> list:
    cases = []
    for seq in sequences:
        dt = seq.dt
        for f in range(len(seq) - horizon):
            frame = true_ego_frame(seq.poses[f])
            gt = ego_project_future(seq.poses, f, horizon, frame, dt)
            cases.append(EvalCase(
                depth=seq.depths[f],
                ground_truth=gt,
                gravity_prior=seq.poses[f].gravity_in_camera(),
                height_prior=float(seq.poses[f].position[1]),
                scene_id=seq.scene_id,
                frame_id=f,
                template=seq.world.template if seq.world is not None else "",
                pose=seq.poses[f],
                world=seq.world,
            ))
    return cases


def cmd_eval(args) -> int:
    started = time.monotonic()
    db = load_database(args.db)
    db2d = load_database(args.db2d, feature_mode=FEATURE_DEPTH2D)
    sequences = load_sequences(args.data)
    cases = build_eval_cases(sequences, db.basis.horizon)
    if args.limit_frames and len(cases) > args.limit_frames:
        cases = cases[: args.limit_frames]

    pred_config = PredictionConfig(max_iters=args.max_iters, cost_tol=args.cost_tol)
    prec_config = PrecisionConfig(
        epsilon=args.epsilon,
        horizon_windows=tuple(
            (a, b) for a, b in zip(_float_list(args.windows)[::2], _float_list(args.windows)[1::2])
        ),
        k_values=tuple(_int_list(args.k_values)),
    )
    report = run_eval(cases, db, db2d, pred_config, prec_config,
                      with_oracle=args.with_oracle,
                      with_detections=not args.no_detections,
                      detection_threshold=args.threshold)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json())
    (out_dir / "precision.csv").write_text(report.precision_csv(prec_config))
    (out_dir / "detection.csv").write_text(report.detection_csv())
    _write_manifest(out_dir, "eval", args, [args.db, args.db2d, args.data],
                    [out_dir / "report.json", out_dir / "precision.csv",
                     out_dir / "detection.csv"], started)
    print((out_dir / "precision.csv").read_text())
    return 0


# ---------------------------------------------------------------------------
# bases

def cmd_bases(args) -> int:
    started = time.monotonic()
    sequences = load_sequences(args.data)
    horizon = args.horizon
    trajectories = []
    for seq in sequences:
        for f in range(len(seq) - horizon):
            frame = true_ego_frame(seq.poses[f])
            trajectories.append(ego_project_future(seq.poses, f, horizon, frame, seq.dt))
    ks = _int_list(args.k_values)
    pca = reconstruction_curve(trajectories, "pca", ks)
    dct = reconstruction_curve(trajectories, "dct", [k for k in ks if k % 2 == 0])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["K,pca,dct"]
    for k in ks:
        dct_val = ("%.6f" % dct[k]) if k in dct else ""
        lines.append(f"{k},{'%.6f' % pca[k]},{dct_val}")
    out.write_text("\n".join(lines) + "\n")
    _write_manifest(out.parent, "bases", args, [args.data], [out], started,
                    name=out.name + ".manifest.json")
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# argument plumbing

def _add_grid_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-theta", type=int, default=36)
    p.add_argument("--n-radius", type=int, default=96)
    p.add_argument("--theta-min", type=float, default=float(np.pi / 6))
    p.add_argument("--theta-max", type=float, default=float(5 * np.pi / 6))
    p.add_argument("--r-min", type=float, default=0.5)
    p.add_argument("--r-max", type=float, default=20.0)
    p.add_argument("--phi-max", type=float, default=2.0)


def build_parser():
    parser = argparse.ArgumentParser(prog="egonav", description=__doc__)
    parser.add_argument("--config", default=None, help="flat key = value config file")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--template", default="mixed", choices=list(TEMPLATES) + ["mixed"])
    p.add_argument("--worlds", type=int, default=1)
    p.add_argument("--sequences", type=int, default=1, help="sequences per world")
    p.add_argument("--frames", type=int, default=45)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=0.5)
    p.add_argument("--speed", default="0.9,1.2", help="min,max walking speed m/s")
    p.add_argument("--width", type=int, default=160)
    p.add_argument("--height", type=int, default=120)
    p.add_argument("--fx", type=float, default=70.0)
    p.add_argument("--fy", type=float, default=70.0)
    p.add_argument("--depth-noise-sigma", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)
    subparsers["synth"] = p

    p = sub.add_parser("train", help="build an EGDB training database")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=6, help="basis size")
    p.add_argument("--horizon", type=int, default=30, help="future frames F")
    p.add_argument("--feature", default="egospace", choices=["egospace", "depth2d"])
    p.add_argument("--pitch-bins", type=int, default=3, choices=[1, 3])
    p.add_argument("--seed", type=int, default=0)
    _add_grid_flags(p)
    p.set_defaults(func=cmd_train)
    subparsers["train"] = p

    p = sub.add_parser("predict", help="predict trajectories for one depth image")
    p.add_argument("--db", required=True)
    p.add_argument("--depth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--cost-tol", type=float, default=1e-4)
    p.add_argument("--step-init", type=float, default=0.5)
    p.add_argument("--reg-lambda", type=float, default=0.0)
    p.add_argument("--gravity", default="0,-1,0")
    p.add_argument("--height-prior", type=float, default=1.6)
    p.add_argument("--extent", default="-10,10,0,20")
    p.add_argument("--resolution", type=float, default=DEFAULT_RESOLUTION)
    p.add_argument("--sigma", type=float, default=DEFAULT_SIGMA)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)
    subparsers["predict"] = p

    p = sub.add_parser("eval", help="run the five-method benchmark")
    p.add_argument("--db", required=True)
    p.add_argument("--db2d", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-values", default="30,60,100")
    p.add_argument("--epsilon", type=float, default=1.5)
    p.add_argument("--windows", default="0,5,5,10,10,15",
                   help="flat list of window starts/ends in seconds")
    p.add_argument("--max-iters", type=int, default=40)
    p.add_argument("--cost-tol", type=float, default=1e-4)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--with-oracle", action="store_true")
    p.add_argument("--no-detections", action="store_true")
    p.add_argument("--limit-frames", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)
    subparsers["eval"] = p

    p = sub.add_parser("bases", help="reconstruction-error curves (PCA vs DCT)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k-values", default="2,4,6,8,10,12")
    p.add_argument("--horizon", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bases)
    subparsers["bases"] = p
    return parser, subparsers


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, subparsers = build_parser()

    # config-file defaults sit below explicit flags
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, _ = pre.parse_known_args(argv)
    try:
        if known.config:
            values = parse_config_file(known.config)
            for sp in subparsers.values():
                valid = {a.dest for a in sp._actions}
                sp.set_defaults(**{k: v for k, v in values.items() if k in valid})
        args = parser.parse_args(argv)
        return args.func(args)
    except (InputFormatError, FileNotFoundError, NotADirectoryError, EgoNavError) as exc:
        if isinstance(exc, (PlaneNotFoundError, DegenerateGazeError, EmptyDepthError)):
            code = 3
        elif isinstance(exc, EmptyPitchBinError):
            code = 4
        else:
            code = 2
        print(f"egonav: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
