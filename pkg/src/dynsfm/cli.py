"""Command line entry point.

Exit codes: 0 success, 2 validation error, 3 estimation failure. The error
name is printed on standard error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .errors import DynSfmError, EstimationError, ValidationError
from .evaluation import evaluate_scene, table3, table4, trajectory_residuals
from .ply import export_ply
from .reconstruct import ReconstructConfig, calibrate_cameras, reconstruct_scene, synchronize
from .robust import default_distortion_grid
from .scene import ReconstructionMode

log = logging.getLogger("dynsfm")


def _config(args) -> ReconstructConfig:
    cfg = ReconstructConfig()
    seed = getattr(args, "seed", None)
    if seed is not None:
        cfg.ransac = replace(cfg.ransac, rng_seed=seed)
        cfg.sync = replace(cfg.sync, ransac=replace(cfg.sync.ransac, rng_seed=seed))
    grid = getattr(args, "grid", None)
    if grid is not None:
        cfg.d_grid = _parse_grid(grid)
    return cfg


def _parse_grid(text: str) -> np.ndarray:
    """``N`` for the default grid with N values per axis, or a comma list of d0 values."""
    try:
        if "," not in text:
            return default_distortion_grid(int(text))
        vals = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ValidationError(f"--grid: expected an integer or a comma-separated list, got {text!r}") from None
    a, b = np.meshgrid(vals, vals, indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=1)


# ---------------------------------------------------------------------------
# persisted intermediate results


def _calibration_dict(calib) -> dict:
    return {"cameras": [{"id": int(c.camera_id), "source": c.source,
                         "pair": None if c.pair is None else [int(v) for v in c.pair],
                         "inliers": int(c.inliers), "matches": int(c.matches), "low_coverage": bool(c.low_coverage),
                         "intrinsics": io.intrinsics_to_dict(c.intrinsics)} for c in calib]}


def _load_intrinsics(path: Path, data):
    raw = io.read_json(path)
    by_id = {}
    for k, c in enumerate(raw.get("cameras", [])):
        where = f"{path}: cameras[{k}]"
        by_id[io._field(c, "id", where, int)] = io.intrinsics_from_dict(c.get("intrinsics") or {}, where)
    missing = [c.id for c in data.cameras if c.id not in by_id]
    if missing:
        raise ValidationError(f"{path}: no intrinsics for camera(s) {missing}")
    return [by_id[c.id] for c in data.cameras]


def _sync_dict(data, outcome) -> dict:
    ids = [c.id for c in data.cameras]
    pairs = []
    for p in outcome.pairs:
        h = p.hypothesis
        pairs.append({"i": ids[p.i], "j": ids[p.j], **io.time_map_to_dict(h.time_map),
                      "inliers": int(h.inlier_samples), "samples": int(h.n_samples), "score": float(h.score),
                      "pair_inlier_fraction": [float(v) for v in h.pair_inlier_fraction],
                      "degenerate": bool(h.degenerate)})
    return {"reference": ids[outcome.reference],
            "cameras": [{"id": i, **io.time_map_to_dict(tm)} for i, tm in zip(ids, outcome.time_maps)],
            "pairs": pairs,
            "failures": [{"i": ids[i], "j": ids[j], "error": e} for (i, j), e in sorted(outcome.failures.items())]}


def _load_time_maps(path: Path, data):
    raw = io.read_json(path)
    by_id = {}
    for k, c in enumerate(raw.get("cameras", [])):
        where = f"{path}: cameras[{k}]"
        by_id[io._field(c, "id", where, int)] = io.time_map_from_dict(c, where)
    missing = [c.id for c in data.cameras if c.id not in by_id]
    if missing:
        raise ValidationError(f"{path}: no time map for camera(s) {missing}")
    if raw.get("reference") != data.cameras[0].id:
        raise ValidationError(f"{path}: time maps must refer to camera {data.cameras[0].id}")
    return [by_id[c.id] for c in data.cameras]


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    from .synthgen import SynthConfig, degrade, generate
    cfg = SynthConfig()
    if args.config:
        cfg = SynthConfig.from_dict(io.read_json(args.config))
    if args.seed is not None:
        cfg = replace(cfg, rng_seed=args.seed)
    data, truth = generate(cfg)
    if args.degrade:
        data, truth = degrade(data, truth, args.degrade)
    out = Path(args.out)
    io.write_dataset(data, out)
    io.write_truth(truth, out / "truth.json")
    print(f"wrote {out}: {len(data.match_uv)} matches, {len(data.tr_uv)} tracklet samples")


def cmd_calibrate(args):
    data = io.read_dataset(args.data)
    calib = calibrate_cameras(data, _config(args))
    out = Path(args.out) if args.out else Path(args.data) / "intrinsics.json"
    io.write_json(out, _calibration_dict(calib))
    for c in calib:
        flag = " (low coverage)" if c.low_coverage else ""
        print(f"camera {c.camera_id}: f={c.intrinsics.f:.3f} d0={c.intrinsics.d0:.4g} [{c.source}]{flag}")


def _intrinsics_for(args, data, cfg):
    path = Path(args.intrinsics) if getattr(args, "intrinsics", None) else Path(args.data) / "intrinsics.json"
    if path.exists():
        return _load_intrinsics(path, data)
    if all(c.prior is not None for c in data.cameras):
        return [c.prior for c in data.cameras]
    if len(data.match_uv):
        return [c.intrinsics for c in calibrate_cameras(data, cfg)]
    return [c.prior or c.default_intrinsics() for c in data.cameras]


def cmd_sync(args):
    data = io.read_dataset(args.data)
    cfg = _config(args)
    outcome = synchronize(data, _intrinsics_for(args, data, cfg), cfg)
    out = Path(args.out) if args.out else Path(args.data) / "timemaps.json"
    io.write_json(out, _sync_dict(data, outcome))
    for c, tm in zip(data.cameras, outcome.time_maps):
        print(f"camera {c.id}: alpha={tm.alpha:.6f} beta={tm.beta:.3f}")


def cmd_reconstruct(args):
    data = io.read_dataset(args.data)
    cfg = _config(args)
    cfg.fix_alpha = args.fix_alpha
    mode = ReconstructionMode.parse(args.mode)
    intr = _intrinsics_for(args, data, cfg)
    tpath = Path(args.timemaps) if args.timemaps else Path(args.data) / "timemaps.json"
    tms = _load_time_maps(tpath, data) if tpath.exists() else None
    res = reconstruct_scene(data, mode, cfg, intrinsics=intr, time_maps=tms)
    out = Path(args.out) if args.out else Path(args.data)
    out.mkdir(parents=True, exist_ok=True)
    io.write_scene(res.scene, out / "scene.json")
    io.write_json(out / "report.json", {"mode": mode.value, "init_pair": [data.cameras[k].id for k in res.init_pair],
                                        **res.report.to_dict()})
    export_ply(res.scene, out / "scene.ply")
    r = res.report
    print(f"{mode.value}: {r.termination} after {r.iterations} iterations, "
          f"mean reprojection {r.mean_reprojection_px:.4g} px")


def cmd_evaluate(args):
    data = io.read_dataset(args.data)
    reports, scenes = {}, {}
    for path in args.scene:
        scene = io.read_scene(path)
        rep = evaluate_scene(scene, data)
        key = scene.mode or Path(path).stem
        reports[key] = rep
        scenes[key] = scene
    name = args.name or Path(args.data).name
    modes = {k: v for k, v in reports.items() if k in {m.value for m in ReconstructionMode}}
    ids = [c.id for c in data.cameras]
    out = {"dataset": name, "reports": [reports[k].to_dict() for k in reports],
           "table4": table4({name: modes}, ids[:2]), "table3": table3(scenes),
           "success": all(r.success for r in reports.values())}
    out_path = Path(args.out) if args.out else Path(args.data) / "eval.json"
    io.write_json(out_path, out)
    if args.residuals:
        import csv
        with open(args.residuals, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scene", "camera_id", "object_id", "frame", "error_px"])
            for key, scene in scenes.items():
                for c, o, f, e in zip(*trajectory_residuals(scene, data)):
                    w.writerow([key, int(c), int(o), int(f), repr(float(e))])
    for key, r in reports.items():
        print(f"{key}: success={r.success} e_cp={r.e_cp} e_traj={r.e_traj}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dynsfm", description="Reconstruction from unsynchronized, uncalibrated cameras.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic dataset with ground truth")
    s.add_argument("--config", help="JSON file with generator settings")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.add_argument("--degrade", choices=["identity", "narrow-band", "low-overlap", "wide-baseline"])
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("calibrate", help="two-view focal length and distortion estimation")
    s.add_argument("--data", required=True)
    s.add_argument("--grid", help="distortion grid: N values per axis, or a comma list of d0 values")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("sync", help="estimate time maps from trajectories")
    s.add_argument("--data", required=True)
    s.add_argument("--intrinsics")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_sync)

    s = sub.add_parser("reconstruct", help="build and bundle-adjust a scene")
    s.add_argument("--data", required=True)
    s.add_argument("--mode", required=True, choices=[m.value for m in ReconstructionMode])
    s.add_argument("--fix-alpha", action="store_true", help="keep frame-rate ratios at their nominal values")
    s.add_argument("--intrinsics")
    s.add_argument("--timemaps")
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("evaluate", help="control-point and trajectory reprojection errors")
    s.add_argument("--data", required=True)
    s.add_argument("--scene", required=True, action="append", help="scene.json (repeat for several modes)")
    s.add_argument("--name", help="dataset name used in the tables")
    s.add_argument("--residuals", help="optional CSV of per-observation trajectory errors")
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ValidationError as e:
        print(f"{e.name}: {e}", file=sys.stderr)
        return 2
    except EstimationError as e:
        print(f"{e.name}: {e}", file=sys.stderr)
        return 3
    except DynSfmError as e:
        # geometric failures surfacing from estimation count as estimation failures
        print(f"{e.name}: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"validation-error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
