"""Command line entry points.

    semmap render     --mesh MAP --pose "lat,lon,alt,yaw,pitch,roll"
    semmap localize   --mesh MAP --image CAM.png --pose INITIAL
    semmap update     --mesh MAP --image CAM.png --store STORE --pose INITIAL
    semmap synth      --seed N [--out DIR]
    semmap eval-sweep --mesh MAP --image CAM.png --store STORE --pose TRUTH

Exit codes: 0 success, 2 bad input or contract violation, 3 a pipeline
stage failed (the stage is named on stderr).
"""

from __future__ import annotations

import argparse
import os
import sys

from .config import PipelineConfig, load_config
from .errors import PipelineStageError, SemmapError
from .geometry import GeoPose
from .pipeline import eval_sweep, run_localize, run_render, run_update

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_STAGE = 3

DEFAULT_SWEEP_ERRORS = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0]


def _parse_pose(text) -> GeoPose:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 6:
        raise ValueError("pose needs 6 comma-separated values: lat,lon,alt,yaw,pitch,roll")
    return GeoPose(*(float(p) for p in parts))


def _add_common(p, *, mesh=False, image=False, store=False, pose=False):
    p.add_argument("--config", metavar="PATH", help="key=value config file")
    p.add_argument("--out", metavar="DIR", help="output directory")
    if mesh:
        p.add_argument("--mesh", metavar="PATH", required=True, help="map mesh file")
    if image:
        p.add_argument("--image", metavar="PATH", required=True,
                       help="segmented camera image (grayscale PNG of class ids)")
    if store:
        p.add_argument("--store", metavar="PATH", required=True,
                       help="descriptor store file")
    if pose:
        p.add_argument("--pose", metavar="POSE", required=True,
                       help='"lat,lon,alt,yaw,pitch,roll" (deg, deg, m, deg...)')


def build_parser():
    parser = argparse.ArgumentParser(prog="semmap",
                                     description="Semantic 3D map localization and update")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render the virtual camera and LIDAR at a pose")
    _add_common(p, mesh=True, pose=True)

    p = sub.add_parser("localize", help="refine a noisy camera pose against the map")
    _add_common(p, mesh=True, image=True, pose=True)

    p = sub.add_parser("update", help="localize, detect changes, and update the map")
    _add_common(p, mesh=True, image=True, store=True, pose=True)
    p.add_argument("--no-localize", action="store_true",
                   help="trust the given pose instead of refining it")

    p = sub.add_parser("synth", help="generate a synthetic scenario")
    _add_common(p)
    p.add_argument("--seed", type=int, default=0, metavar="N")
    p.add_argument("--kind", choices=("street", "wall"), default="wall")
    p.add_argument("--changes", default="add_banner",
                   help="comma-separated change kinds for wall scenarios")

    p = sub.add_parser("eval-sweep",
                       help="descriptor accuracy vs. injected pose error")
    _add_common(p, mesh=True, image=True, store=True, pose=True)
    p.add_argument("--errors", default=",".join(str(e) for e in DEFAULT_SWEEP_ERRORS),
                   help="comma-separated injected position errors in meters")
    p.add_argument("--direction", default="1,0,0",
                   help="sweep direction in the grid frame, east,north,up")
    return parser


def _load_cfg(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.out:
        cfg.out_dir = args.out
    return cfg


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_cfg(args)
        if args.command == "render":
            pose = _parse_pose(args.pose)
            _, _, outputs = run_render(cfg, args.mesh, pose)
            for path in outputs.values():
                print(path)
        elif args.command == "localize":
            pose = _parse_pose(args.pose)
            result = run_localize(cfg, args.mesh, args.image, pose)
            p = result.state.pose
            print(f"{p.lat!r},{p.lon!r},{p.alt!r},{p.yaw!r},{p.pitch!r},{p.roll!r}")
            for path in result.outputs.values():
                print(path, file=sys.stderr)
        elif args.command == "update":
            pose = _parse_pose(args.pose)
            result = run_update(cfg, args.mesh, args.image, args.store, pose,
                                localize=not args.no_localize)
            for line in result.audit:
                print(line)
        elif args.command == "synth":
            from .synth import generate_scenario, write_scenario

            changes = tuple(c for c in args.changes.split(",") if c)
            scenario = generate_scenario(args.kind, args.seed,
                                         changes if args.kind == "wall" else ())
            paths = write_scenario(scenario, cfg.out_dir)
            for path in paths.values():
                print(path)
        elif args.command == "eval-sweep":
            pose = _parse_pose(args.pose)
            errors = [float(e) for e in args.errors.split(",") if e.strip()]
            direction = [float(c) for c in args.direction.split(",")]
            rows, csv_path = eval_sweep(cfg, args.mesh, args.image, args.store,
                                        pose, direction, errors)
            print(csv_path)
        return EXIT_OK
    except PipelineStageError as exc:
        print(f"semmap: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (SemmapError, ValueError, OSError) as exc:
        print(f"semmap: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
