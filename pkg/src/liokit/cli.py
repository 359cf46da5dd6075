"""Batch front end: run the odometry over a dataset, synthesize datasets,
and score trajectories.

Subcommands
-----------
run   --manifest M --config C --out DIR [--no-segmentation]
      [--force-mode lio|lo] [--disable-multires]
sim   --scenario NAME --out DIR [--seed N]
eval  --est EST.tum --gt GT.tum

Exit codes: 0 success, 2 input error (missing or malformed files, bad
config), 3 solver hard-failure (the engine gave up mid-sequence).
"""

import argparse
import csv
import os
import sys

import numpy as np

from .errors import EvaluationError, LiokitError, ParseError, SolverDivergedError
from .evaluate import ate_rmse, end_to_end_error, timing_report
from .formats import (
    SequenceManifest,
    parse_kv_file,
    read_frame,
    read_imu_csv,
    read_tum,
    write_kv_file,
    write_tum,
)
from .motion import ImuLimits
from .pipeline import Pipeline, PipelineConfig, config_from_kv
from .sim import generate_scenario, get_scenario

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3


def _load_config(path) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    kv = parse_kv_file(path)
    try:
        return config_from_kv(kv)
    except ValueError as e:
        raise ParseError(f"{path}: {e}") from e


def _write_observability_csv(path, results) -> None:
    """One row per solved window: time, chosen d, score, per-block factors."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(
            [
                "frame",
                "sub",
                "t_end",
                "d",
                "mode",
                "total_factor",
                "min_factor",
                "kappa",
                "weak",
                "segment",
                "ms",
            ]
        )
        for r in results:
            if r.obs is None:
                w.writerow(
                    [r.frame_index, r.sub_index, f"{r.t_end:.6f}", r.d, r.mode]
                    + [""] * 5
                    + [f"{r.ms:.3f}"]
                )
                continue
            w.writerow(
                [
                    r.frame_index,
                    r.sub_index,
                    f"{r.t_end:.6f}",
                    r.d,
                    r.mode,
                    f"{r.obs.total_factor:.6f}",
                    f"{np.min(r.obs.factors):.6f}",
                    f"{r.obs.kappa:.4f}",
                    int(r.obs.weak),
                    int(r.obs.segment),
                    f"{r.ms:.3f}",
                ]
            )


def _write_mode_events_csv(path, events) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["frame", "t", "prev", "new"])
        for e in events:
            w.writerow([e.frame_index, f"{e.t:.6f}", e.prev, e.new])


def cmd_run(args) -> int:
    manifest = SequenceManifest.load(args.manifest)
    cfg = _load_config(args.config)
    if args.no_segmentation:
        cfg.segmentation.enabled = False
    if args.force_mode:
        cfg.force_mode = args.force_mode
    if args.disable_multires:
        cfg.multires = False
    cfg.limits = ImuLimits(a_max=manifest.imu_a_max, w_max=manifest.imu_w_max,
                           eta=cfg.limits.eta)

    imu = None
    if manifest.imu_path is not None:
        imu = read_imu_csv(manifest.imu_path)
    elif cfg.force_mode != "lo":
        print("no IMU stream in manifest; running LiDAR-only", file=sys.stderr)
        cfg.force_mode = "lo"

    pipe = Pipeline(cfg, imu=imu, imu_rate=manifest.imu_rate)
    for path in manifest.frame_paths:
        pipe.process_frame(read_frame(path))

    os.makedirs(args.out, exist_ok=True)
    t, p, q = pipe.trajectory()
    write_tum(os.path.join(args.out, "trajectory.tum"), t, p, q)
    _write_observability_csv(os.path.join(args.out, "observability.csv"), pipe.results)
    _write_mode_events_csv(os.path.join(args.out, "mode_events.csv"), pipe.mode_events)
    pipe.vmap.dump_csv(os.path.join(args.out, "map.csv"))

    timing = timing_report([r.ms for r in pipe.results])
    summary = {
        "frames": str(len(manifest.frame_paths)),
        "rows": str(len(pipe.results)),
        "mean_d": f"{pipe.mean_d:.4f}",
        "mode_switches": str(len(pipe.mode_events)),
        "mean_ms": f"{timing['mean']:.3f}",
        "p50_ms": f"{timing['p50']:.3f}",
        "p95_ms": f"{timing['p95']:.3f}",
    }
    if manifest.gt_path is not None:
        t_gt, p_gt, _ = read_tum(manifest.gt_path)
        summary["ate_rmse"] = f"{ate_rmse(t, p, t_gt, p_gt):.6f}"
    if manifest.loop:
        summary["end_to_end"] = f"{end_to_end_error(p):.6f}"
    write_kv_file(os.path.join(args.out, "summary.cfg"), summary)
    for key, value in summary.items():
        print(f"{key} = {value}")
    return EXIT_OK


def cmd_sim(args) -> int:
    try:
        sc = get_scenario(args.scenario)
    except KeyError as e:
        raise ParseError(str(e.args[0])) from e
    manifest = generate_scenario(sc, args.out, seed=args.seed)
    print(manifest)
    return EXIT_OK


def cmd_eval(args) -> int:
    t_est, p_est, _ = read_tum(args.est)
    t_gt, p_gt, _ = read_tum(args.gt)
    rmse = ate_rmse(t_est, p_est, t_gt, p_gt)
    print(f"ate_rmse = {rmse:.6f}")
    print(f"end_to_end = {end_to_end_error(p_est):.6f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="liokit", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run odometry over a dataset")
    run.add_argument("--manifest", required=True)
    run.add_argument("--config", default=None)
    run.add_argument("--out", required=True)
    run.add_argument("--no-segmentation", action="store_true")
    run.add_argument("--force-mode", choices=["lio", "lo"], default="")
    run.add_argument("--disable-multires", action="store_true")
    run.set_defaults(func=cmd_run)

    sim = sub.add_parser("sim", help="synthesize a dataset from a scenario")
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.set_defaults(func=cmd_sim)

    ev = sub.add_parser("eval", help="score a trajectory against ground truth")
    ev.add_argument("--est", required=True)
    ev.add_argument("--gt", required=True)
    ev.set_defaults(func=cmd_eval)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SolverDivergedError as e:
        print(f"solver hard-failure: {e}", file=sys.stderr)
        return EXIT_SOLVER
    except (ParseError, EvaluationError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (LiokitError, OSError, ValueError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
