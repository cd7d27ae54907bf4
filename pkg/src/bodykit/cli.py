"""``bodykit`` command line.

Subcommands: make-model, lbs, ik, scan, coarsen, fit, eval, schema.

The body model comes from ``--model``, else the path in ``$BODYKIT_MODEL``,
else the built-in 24-joint synthetic model. Commands that take a JSON
``--config`` resolve settings as flag > config file > default.

Exit status is 0 on success (warnings allowed), 2 on parse/IO/format
problems and 3 on numeric or degenerate failures, including fits that did
not converge. Each run also writes a manifest next to its primary output.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .body_model import BodyModel, PoseState, ShapeState, lbs_forward, load_model, regress_joints, save_model
from .cloud_fitter import FitConfig, FitResult, fit, fit_batch
from .errors import (
    DegenerateConfigurationError,
    DisconnectedMeshError,
    EmptyCropError,
    ModelFormatError,
    NumericError,
    ParameterError,
)
from .fileio import atomic_write_bytes, dumps_json, read_cloud, read_json, read_obj, write_json, write_obj, write_ply, write_xyz
from .geometry import Mesh, Skeleton, point_mesh_distance
from .kinematics_ik import DEFAULT_WEIGHT_THRESHOLD, ik_from_mesh
from .mesh_hierarchy import WEIGHTINGS, coarsen
from .metrics import LossWeights, macro_average, mesh_loss_F, mpere, mpjpe, mpvpe, pa_mpjpe, per_joint_errors
from .rotations import random_axis_angle
from .scan_sim import CropAugmentConfig, ScanConfig, crop_and_augment, scan_with_rays
from .schemas import SCHEMAS, get_schema
from .synthetic import make_synthetic_model

MODEL_ENV = "BODYKIT_MODEL"
EXIT_OK, EXIT_IO, EXIT_NUMERIC = 0, 2, 3


class Run:
    """Collects what goes into the run manifest."""

    def __init__(self, command: str):
        self.command = command
        self.config: dict = {}
        self.seed: int | None = None
        self.inputs: dict = {}
        self.outputs: dict = {}
        self.manifest_path: Path | None = None
        self.started = time.perf_counter()

    def write_manifest(self, status: int, messages: list[str]) -> None:
        if self.manifest_path is None:
            return
        record = {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "version": __version__,
            "duration_seconds": time.perf_counter() - self.started,
            "exit_status": status,
            "warnings": messages,
        }
        write_json(self.manifest_path, record)


def _manifest_for(primary: str | os.PathLike, override: str | None) -> Path:
    if override:
        return Path(override)
    p = Path(primary)
    if p.suffix:
        return p.with_name(p.stem + ".manifest.json")
    return p / "manifest.json"


def _stem_path(primary: str | os.PathLike, suffix: str) -> Path:
    p = Path(primary)
    return p.with_name(p.stem + suffix)


# ------------------------------------------------------------------ loaders


def resolve_model(path: str | None, run: Run) -> BodyModel:
    path = path or os.environ.get(MODEL_ENV) or None
    run.inputs["model"] = path
    if path is None:
        return make_synthetic_model()
    return load_model(path)


def _read_json_file(path: str, kind: str):
    if not Path(path).is_file():
        raise FileNotFoundError(f"{kind} file not found: {path}")
    return read_json(path)


def load_pose_file(path: str, num_joints: int) -> tuple[PoseState, ShapeState | None]:
    """Pose from a pose JSON, an IK result or a fit result."""
    data = _read_json_file(path, "pose")
    if not isinstance(data, dict):
        raise ModelFormatError(f"{path}: expected a JSON object")
    try:
        if "joint_rotations" in data:
            return PoseState.from_dict(data), None
        if isinstance(data.get("pose"), dict):
            shape = ShapeState.from_dict(data["shape"]) if "shape" in data else None
            return PoseState.from_dict(data["pose"]), shape
        if isinstance(data.get("pose"), list):
            rot = np.asarray(data["pose"], dtype=float).reshape(num_joints, 3)
            shape = ShapeState.from_dict(data["shape"]) if "shape" in data else None
            return PoseState(rot, data.get("root_translation", [0.0, 0.0, 0.0])), shape
    except (ValueError, TypeError) as exc:
        if isinstance(exc, ParameterError):
            raise
        raise ModelFormatError(f"{path}: malformed pose ({exc})") from None
    raise ModelFormatError(f"{path}: no pose record found")


def load_shape_file(path: str) -> ShapeState:
    data = _read_json_file(path, "shape")
    if isinstance(data, list):
        return ShapeState(data)
    if isinstance(data, dict) and "coefficients" in data:
        return ShapeState.from_dict(data)
    if isinstance(data, dict) and isinstance(data.get("shape"), dict):
        return ShapeState.from_dict(data["shape"])
    raise ModelFormatError(f"{path}: no shape coefficients found")


def load_skeleton_file(path: str) -> Skeleton:
    data = _read_json_file(path, "skeleton")
    if not isinstance(data, dict) or "joints" not in data:
        raise ModelFormatError(f"{path}: expected an object with a 'joints' array")
    try:
        return Skeleton(np.asarray(data["joints"], dtype=float), tuple(data.get("joint_names", ())))
    except (ValueError, TypeError) as exc:
        if isinstance(exc, (ParameterError, NumericError)):
            raise
        raise ModelFormatError(f"{path}: malformed joints ({exc})") from None


def load_mesh_file(path: str) -> Mesh:
    if not Path(path).is_file():
        raise FileNotFoundError(f"mesh file not found: {path}")
    return read_obj(path)


def _check_topology(model: BodyModel, mesh: Mesh, path: str) -> None:
    if mesh.vertex_count != model.num_vertices or not np.array_equal(mesh.faces, model.faces):
        raise ParameterError(
            f"{path}: topology does not match the model "
            f"({mesh.vertex_count} vertices / {len(mesh.faces)} faces vs "
            f"{model.num_vertices} / {len(model.faces)})"
        )


def _merge(defaults: dict, file_path: str | None, flags: dict) -> dict:
    """flag > config file > default."""
    out = dict(defaults)
    if file_path:
        data = _read_json_file(file_path, "config")
        if not isinstance(data, dict):
            raise ModelFormatError(f"{file_path}: config must be a JSON object")
        out.update(data)
    out.update({k: v for k, v in flags.items() if v is not None})
    return out


# ------------------------------------------------------------------ commands


def cmd_make_model(args, run: Run) -> int:
    run.manifest_path = _manifest_for(args.out, args.manifest)
    config = {
        "joint_count": args.joints,
        "ring_resolution": args.ring_resolution,
        "rings_per_bone": args.rings_per_bone,
        "rigid": args.rigid,
        "with_shape": not args.no_shape,
        "layout": args.layout,
    }
    run.config = config
    model = make_synthetic_model(**config)
    save_model(args.out, model)
    run.outputs["model"] = str(args.out)
    if args.out_mesh:
        write_obj(args.out_mesh, model.template_mesh())
        run.outputs["template_mesh"] = str(args.out_mesh)
    return EXIT_OK


def cmd_lbs(args, run: Run) -> int:
    run.manifest_path = _manifest_for(args.out_mesh, args.manifest)
    model = resolve_model(args.model, run)
    J = model.num_joints
    shape = None
    if args.random_pose:
        if args.pose:
            raise ParameterError("--pose and --random-pose are mutually exclusive")
        run.seed = args.seed
        rng = np.random.default_rng(args.seed)
        rot = random_axis_angle(rng, J, args.max_angle)
        root = int(np.flatnonzero(model.parents < 0)[0])
        rot[root] = random_axis_angle(rng, 1, args.root_max_angle)[0]
        trans = rng.uniform(-args.max_translation, args.max_translation, size=3)
        pose = PoseState(rot, trans)
        if args.random_shape and model.num_betas:
            shape = ShapeState(rng.uniform(-args.random_shape, args.random_shape, size=model.num_betas))
        run.config = {"max_angle": args.max_angle, "root_max_angle": args.root_max_angle,
                      "max_translation": args.max_translation, "random_shape": args.random_shape}
    elif args.pose:
        run.inputs["pose"] = args.pose
        pose, shape = load_pose_file(args.pose, J)
    else:
        pose = PoseState.zeros(J)
    if args.shape:
        run.inputs["shape"] = args.shape
        shape = load_shape_file(args.shape)
    out = lbs_forward(model, pose, shape)
    write_obj(args.out_mesh, out.mesh)
    joints_path = args.out_joints or _stem_path(args.out_mesh, ".joints.json")
    write_json(joints_path, Skeleton(out.joints, model.joint_names).to_dict())
    pose_path = args.out_pose or _stem_path(args.out_mesh, ".pose.json")
    record = {"pose": pose.to_dict(), "shape": (shape or ShapeState(np.zeros(model.num_betas))).to_dict()}
    write_json(pose_path, record)
    run.outputs.update(mesh=str(args.out_mesh), joints=str(joints_path), pose=str(pose_path))
    return EXIT_OK


def cmd_ik(args, run: Run) -> int:
    run.manifest_path = _manifest_for(args.out, args.manifest)
    model = resolve_model(args.model, run)
    run.inputs["mesh"] = args.mesh
    run.config = {"threshold": args.threshold, "estimate_shape": args.estimate_shape}
    mesh = load_mesh_file(args.mesh)
    _check_topology(model, mesh, args.mesh)
    result, shape = ik_from_mesh(model, mesh, args.threshold, args.estimate_shape)
    record = result.to_dict()
    if shape is not None:
        record["shape"] = shape.to_dict()
    write_json(args.out, record)
    run.outputs["ik_result"] = str(args.out)
    if args.out_mesh:
        write_obj(args.out_mesh, lbs_forward(model, result.pose, shape).mesh)
        run.outputs["mesh"] = str(args.out_mesh)
    flagged = result.flagged_joints
    if flagged:
        print(f"warning: joints without a usable vertex selection: {flagged}", file=sys.stderr)
    if len(flagged) == model.num_joints:
        print("error: every joint is degenerate", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _pelvis_from(args) -> np.ndarray | None:
    if args.pelvis is not None:
        return np.asarray(args.pelvis, dtype=float)
    if args.pelvis_from:
        return load_skeleton_file(args.pelvis_from).joints[0]
    return None


def cmd_scan(args, run: Run) -> int:
    run.manifest_path = _manifest_for(args.out, args.manifest)
    run.inputs["mesh"] = args.mesh
    run.inputs["config"] = args.config
    flags = {
        "seed": args.seed,
        "range_noise_sigma": args.sigma,
        "dropout_probability": args.dropout,
        "sensor_origin": tuple(args.sensor_origin) if args.sensor_origin else None,
    }
    merged = _merge(ScanConfig().to_dict(), args.config, flags)
    crop_section = merged.pop("crop", None) or {}
    config = ScanConfig.from_dict(merged)
    run.seed = config.seed
    run.config = {"scan": config.to_dict()}
    mesh = load_mesh_file(args.mesh)
    result = scan_with_rays(mesh, config)
    write_ply(args.out, result.cloud)
    xyz_path = args.out_xyz or _stem_path(args.out, ".xyz")
    write_xyz(xyz_path, result.cloud)
    run.outputs.update(ply=str(args.out), xyz=str(xyz_path))
    ray_count = int(np.prod([
        int(np.floor((hi - lo) / st + 1e-9)) + 1
        for (lo, hi), st in ((config.azimuth_range, config.azimuth_step), (config.elevation_range, config.elevation_step))
    ]))
    report = {"scan_config": config.to_dict(), "point_count": len(result.cloud), "ray_count": ray_count, "crop": None}

    pelvis = _pelvis_from(args)
    if pelvis is not None:
        crop_flags = {"cube_side": args.cube_side, "target_points": args.target_points}
        crop_cfg = CropAugmentConfig(**{**CropAugmentConfig().to_dict(), **crop_section,
                                        **{k: v for k, v in crop_flags.items() if v is not None}})
        cropped, transform = crop_and_augment(result.cloud, pelvis, crop_cfg, args.mode, seed=config.seed)
        crop_path = args.out_cropped or _stem_path(args.out, ".crop.ply")
        write_ply(crop_path, cropped)
        write_xyz(Path(crop_path).with_suffix(".xyz"), cropped)
        run.outputs["cropped"] = str(crop_path)
        run.config["crop"] = crop_cfg.to_dict()
        report["crop"] = {"config": crop_cfg.to_dict(), "mode": args.mode, "pelvis": pelvis.tolist(),
                          "transform": transform.to_dict()}
    report_path = _stem_path(args.out, ".scan.json")
    write_json(report_path, report)
    run.outputs["report"] = str(report_path)
    return EXIT_OK


def cmd_coarsen(args, run: Run) -> int:
    run.manifest_path = _manifest_for(args.out, args.manifest)
    if args.mesh:
        run.inputs["mesh"] = args.mesh
        mesh = load_mesh_file(args.mesh)
    else:
        mesh = resolve_model(args.model, run).template_mesh()
    run.config = {"levels": args.levels, "weighting": args.weighting}
    hierarchy = coarsen(mesh, args.levels, args.weighting)
    record = hierarchy.to_dict()
    record["weighting"] = args.weighting
    write_json(args.out, record)
    run.outputs["hierarchy"] = str(args.out)
    if args.obj_dir:
        obj_dir = Path(args.obj_dir)
        paths = []
        for k, level in enumerate(hierarchy.levels):
            p = obj_dir / f"level_{k:02d}.obj"
            faces = mesh.faces if k == 0 else np.zeros((0, 3), dtype=np.int64)
            write_obj(p, Mesh(level.positions, faces), lines=None if k == 0 else level.edges)
            paths.append(str(p))
        run.outputs["levels"] = paths
    if args.figure:
        from .plotting import plot_level_sizes

        plot_level_sizes(hierarchy.sizes, args.figure)
        run.outputs["figure"] = str(args.figure)
    print(" -> ".join(str(s) for s in hierarchy.sizes))
    return EXIT_OK


def _fit_config(args) -> FitConfig:
    flags = {
        "lambda_joint": args.lambda_joint,
        "lambda_prior": args.lambda_prior,
        "max_iterations": args.max_iterations,
        "convergence_tol": args.tol,
    }
    return FitConfig.from_dict(_merge(FitConfig().to_dict(), args.config, flags))


def cmd_fit(args, run: Run) -> int:
    run.manifest_path = _manifest_for(args.out, args.manifest)
    model = resolve_model(args.model, run)
    config = _fit_config(args)
    run.config = config.to_dict()
    run.inputs["targets"] = args.targets
    src = Path(args.targets)
    if src.is_dir():
        files = sorted(src.glob("*.json"))
        skeletons = [load_skeleton_file(str(f)) for f in files]
        results = fit_batch(model, [s.joints for s in skeletons], config, workers=args.workers)
        out_dir = Path(args.out)
        items, bad = [], 0
        for f, res in zip(files, results):
            if isinstance(res, Exception):
                bad += 1
                items.append({"source": f.name, "result": None, "error": str(res)})
                continue
            bad += not res.converged
            items.append({"source": f.name, "result": res.to_dict(), "error": None})
            write_obj(out_dir / f"{f.stem}.obj", lbs_forward(model, res.pose, res.shape).mesh)
        write_json(out_dir / "fit_batch.json", {"items": items})
        run.outputs["batch"] = str(out_dir / "fit_batch.json")
        run.manifest_path = _manifest_for(out_dir / "fit_batch.json", args.manifest)
        return EXIT_NUMERIC if bad else EXIT_OK

    skeleton = load_skeleton_file(args.targets)
    result: FitResult = fit(model, skeleton.joints, config)
    write_json(args.out, result.to_dict())
    mesh_path = args.out_mesh or _stem_path(args.out, ".obj")
    write_obj(mesh_path, lbs_forward(model, result.pose, result.shape).mesh)
    run.outputs.update(fit_result=str(args.out), mesh=str(mesh_path))
    if args.figure:
        from .plotting import plot_objective_trace

        plot_objective_trace(result.objective_trace, args.figure)
        run.outputs["figure"] = str(args.figure)
    print(f"mpjpe_to_targets_cm={result.final_mpjpe_to_targets!r} iterations={result.iterations} "
          f"converged={result.converged}")
    if not result.converged:
        print("error: fit did not converge", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


_METRIC_KEYS = ("mpjpe_cm", "pa_mpjpe_cm", "mpvpe_cm", "mpere", "cloud_to_mesh_max_m", "cloud_to_mesh_mean_m")


def _joints_for(model, joints_path, mesh):
    if joints_path:
        return load_skeleton_file(joints_path).joints
    if mesh is not None:
        return regress_joints(model, mesh)
    return None


def _pairs(pred, gt, name):
    pred, gt = pred or [], gt or []
    if len(pred) != len(gt):
        raise ParameterError(f"{len(pred)} predicted vs {len(gt)} ground-truth {name} files")
    return pred, gt


def cmd_eval(args, run: Run) -> int:
    run.manifest_path = _manifest_for(args.out, args.manifest)
    pm, gm = _pairs(args.pred_mesh, args.gt_mesh, "mesh")
    pj, gj = _pairs(args.pred_joints, args.gt_joints, "joint")
    clouds = args.cloud or []
    n = max(len(pm), len(pj))
    if n == 0:
        raise ParameterError("nothing to evaluate: pass --pred-mesh/--gt-mesh or --pred-joints/--gt-joints")
    for lst, what in ((pm, "mesh"), (pj, "joint"), (clouds, "cloud")):
        if lst and len(lst) != n:
            raise ParameterError(f"expected {n} {what} files, got {len(lst)}")
    need_model = bool(pm)
    model = resolve_model(args.model, run) if need_model else None
    run.inputs.update(pred_mesh=pm, gt_mesh=gm, pred_joints=pj, gt_joints=gj, cloud=clouds)
    weights = LossWeights(*args.loss_weights) if args.loss_weights else LossWeights()
    run.config = {"loss_weights": [weights.vertex, weights.joint, weights.normal, weights.edge]}

    samples = []
    for i in range(n):
        pred_mesh = load_mesh_file(pm[i]) if pm else None
        gt_mesh = load_mesh_file(gm[i]) if gm else None
        if pred_mesh is not None:
            _check_topology(model, pred_mesh, pm[i])
            _check_topology(model, gt_mesh, gm[i])
        p_j = _joints_for(model, pj[i] if pj else None, pred_mesh)
        g_j = _joints_for(model, gj[i] if gj else None, gt_mesh)
        metrics = dict.fromkeys(_METRIC_KEYS)
        metrics["mpjpe_cm"] = mpjpe(p_j, g_j)
        try:
            metrics["pa_mpjpe_cm"] = pa_mpjpe(p_j, g_j)
        except DegenerateConfigurationError as exc:
            print(f"warning: sample {i}: PA-MPJPE undefined ({exc})", file=sys.stderr)
        loss = None
        if pred_mesh is not None:
            metrics["mpvpe_cm"] = mpvpe(pred_mesh, gt_mesh)
            metrics["mpere"] = mpere(pred_mesh, gt_mesh)
            loss = mesh_loss_F(pred_mesh, gt_mesh, model, weights)._asdict()
        if clouds:
            cloud = read_cloud(clouds[i])
            target_mesh = pred_mesh if pred_mesh is not None else None
            if target_mesh is not None and len(cloud):
                d = point_mesh_distance(cloud.points, target_mesh)
                metrics["cloud_to_mesh_max_m"] = float(d.max())
                metrics["cloud_to_mesh_mean_m"] = float(d.mean())
        name = Path(pm[i] if pm else pj[i]).stem
        samples.append({
            "name": name,
            "metrics": metrics,
            "mesh_loss": loss,
            "per_joint_error_cm": per_joint_errors(p_j, g_j).tolist(),
        })

    summary = {}
    for k in _METRIC_KEYS:
        vals = [s["metrics"][k] for s in samples if s["metrics"][k] is not None]
        summary[k] = macro_average(vals) if vals else None
    report = {"samples": samples, "summary": summary, "averaging": "macro"}
    write_json(args.out, report)
    run.outputs["report"] = str(args.out)

    csv_path = args.csv or _stem_path(args.out, ".csv")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["name", *_METRIC_KEYS])
    for s in samples:
        writer.writerow([s["name"], *("" if s["metrics"][k] is None else repr(s["metrics"][k]) for k in _METRIC_KEYS)])
    atomic_write_bytes(csv_path, buf.getvalue().encode())
    run.outputs["csv"] = str(csv_path)

    if args.figures_dir:
        from .plotting import plot_metric_summary, plot_per_joint_errors

        fig_dir = Path(args.figures_dir)
        fig_dir.mkdir(parents=True, exist_ok=True)
        names = model.joint_names if model is not None else [f"joint_{k}" for k in range(len(samples[0]["per_joint_error_cm"]))]
        errs = np.array([s["per_joint_error_cm"] for s in samples])
        plot_per_joint_errors(errs, names, fig_dir / "per_joint_error.png", "per-joint error")
        figures = [str(fig_dir / "per_joint_error.png")]
        per_metric = {k: [s["metrics"][k] for s in samples] for k in ("mpjpe_cm", "pa_mpjpe_cm", "mpvpe_cm")
                      if all(s["metrics"][k] is not None for s in samples)}
        if per_metric:
            plot_metric_summary(per_metric, fig_dir / "metric_summary.png")
            figures.append(str(fig_dir / "metric_summary.png"))
        run.outputs["figures"] = figures

    for k in ("mpjpe_cm", "pa_mpjpe_cm", "mpvpe_cm", "mpere"):
        if summary[k] is not None:
            print(f"{k}={summary[k]!r}")
    return EXIT_OK


def cmd_schema(args, run: Run) -> int:
    text = dumps_json(get_schema(args.name))
    if args.out:
        atomic_write_bytes(args.out, text.encode())
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bodykit", description="Body-model toolkit: skinning, IK, scanning, fitting, metrics.")
    parser.add_argument("--version", action="version", version=f"bodykit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(func=func)
        if name != "schema":
            p.add_argument("--manifest", help="manifest path (default: next to the primary output)")
        return p

    def model_arg(p):
        p.add_argument("--model", help=f"model JSON (default: ${MODEL_ENV}, else built-in synthetic model)")

    p = add("make-model", cmd_make_model, "write a procedural tube-limb body model")
    p.add_argument("--out", required=True)
    p.add_argument("--joints", type=int, default=24)
    p.add_argument("--ring-resolution", type=int, default=8)
    p.add_argument("--rings-per-bone", type=int, default=6)
    p.add_argument("--rigid", action="store_true", help="one joint per vertex (exact MeshIK round trips)")
    p.add_argument("--no-shape", action="store_true")
    p.add_argument("--layout", choices=("smpl", "chain"))
    p.add_argument("--out-mesh", help="also write the template as OBJ")

    p = add("lbs", cmd_lbs, "pose the model and write the mesh, joints and pose")
    model_arg(p)
    p.add_argument("--pose", help="pose JSON (pose, IK result or fit result)")
    p.add_argument("--shape", help="shape JSON")
    p.add_argument("--random-pose", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-angle", type=float, default=np.pi / 3, help="per-joint angle bound for --random-pose")
    p.add_argument("--root-max-angle", type=float, default=np.pi / 2)
    p.add_argument("--max-translation", type=float, default=0.0)
    p.add_argument("--random-shape", type=float, default=0.0, help="uniform shape coefficient bound")
    p.add_argument("--out-mesh", required=True)
    p.add_argument("--out-joints")
    p.add_argument("--out-pose")

    p = add("ik", cmd_ik, "recover joint rotations from a posed mesh (MeshIK)")
    model_arg(p)
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_WEIGHT_THRESHOLD)
    p.add_argument("--estimate-shape", action="store_true", help="estimate shape from bone lengths first")
    p.add_argument("--out-mesh", help="write the re-posed model mesh")

    p = add("scan", cmd_scan, "simulate a LiDAR scan of a mesh; optionally crop around the pelvis")
    p.add_argument("--mesh", required=True)
    p.add_argument("--config", help="scan config JSON; an optional 'crop' object holds crop settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--sigma", type=float, help="range noise sigma (m)")
    p.add_argument("--dropout", type=float)
    p.add_argument("--sensor-origin", type=float, nargs=3)
    p.add_argument("--out", required=True, help="PLY output (XYZ written alongside)")
    p.add_argument("--out-xyz")
    p.add_argument("--pelvis", type=float, nargs=3, help="crop centre")
    p.add_argument("--pelvis-from", help="joints JSON whose first joint is the crop centre")
    p.add_argument("--mode", choices=("train", "eval"), default="eval")
    p.add_argument("--cube-side", type=float)
    p.add_argument("--target-points", type=int)
    p.add_argument("--out-cropped")

    p = add("coarsen", cmd_coarsen, "build a heavy-edge-matching mesh hierarchy")
    model_arg(p)
    p.add_argument("--mesh", help="OBJ mesh (default: model template)")
    p.add_argument("--levels", type=int, default=9)
    p.add_argument("--weighting", choices=WEIGHTINGS, default="inverse_length")
    p.add_argument("--out", required=True)
    p.add_argument("--obj-dir", help="write each level as OBJ (coarse levels as edge lines)")
    p.add_argument("--figure", help="PNG plot of level sizes")

    p = add("fit", cmd_fit, "fit pose and shape to target joints")
    model_arg(p)
    p.add_argument("--targets", required=True, help="skeleton JSON, or a directory of them for a batch")
    p.add_argument("--config", help="fit config JSON")
    p.add_argument("--lambda-joint", type=float)
    p.add_argument("--lambda-prior", type=float)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="result JSON (a directory in batch mode)")
    p.add_argument("--out-mesh")
    p.add_argument("--figure", help="PNG plot of the objective trace")

    p = add("eval", cmd_eval, "compute metrics and write a JSON report plus CSV")
    model_arg(p)
    p.add_argument("--pred-mesh", nargs="+")
    p.add_argument("--gt-mesh", nargs="+")
    p.add_argument("--pred-joints", nargs="+")
    p.add_argument("--gt-joints", nargs="+")
    p.add_argument("--cloud", nargs="+", help="scans to measure against the predicted meshes")
    p.add_argument("--loss-weights", type=float, nargs=4, metavar=("V", "J", "N", "E"))
    p.add_argument("--out", required=True)
    p.add_argument("--csv")
    p.add_argument("--figures-dir")

    p = add("schema", cmd_schema, "print the JSON schema of an output file")
    p.add_argument("name", choices=sorted(SCHEMAS))
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    run = Run(args.command)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            status = args.func(args, run)
        except (NumericError, DisconnectedMeshError, EmptyCropError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            status = EXIT_NUMERIC
        except (ParameterError, ModelFormatError, OSError, ValueError, KeyError, TypeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            status = EXIT_IO
    messages = [str(w.message) for w in caught]
    for m in messages:
        print(f"warning: {m}", file=sys.stderr)
    try:
        run.write_manifest(status, messages)
    except OSError as exc:
        print(f"error: could not write manifest: {exc}", file=sys.stderr)
        status = status or EXIT_IO
    return status


if __name__ == "__main__":
    sys.exit(main())
