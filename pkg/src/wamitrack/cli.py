"""Command-line entry points: simulate, track, eval, render."""

from __future__ import annotations

import argparse
import importlib.resources
import json
import os
import sys

from .config import PipelineConfig
from .errors import WamitrackError
from .fileio import (load_frames, read_detections_csv, read_tracks_csv,
                     write_detections_csv, write_frames, write_tracks_csv)
from .metrics import evaluate, format_report
from .pipeline import run_tracking
from .simulator import ScenarioConfig, render_annotated, simulate


def _build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", metavar="FILE",
                        help="pipeline config overrides (key = value lines)")
    shared.add_argument("--seed", type=int, default=0,
                        help="simulation seed (default: 0)")
    shared.add_argument("--dump-debug", metavar="DIR",
                        help="write per-frame flow and voting-map dumps")
    shared.add_argument("--dbt-only", action="store_true",
                        help="disable the local context tracker")

    parser = argparse.ArgumentParser(
        prog="wamitrack",
        description="Multi-target tracking for low-frame-rate aerial imagery")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[shared],
                       help="render a synthetic scenario to frames + CSVs")
    p.add_argument("--scenario", required=True,
                   help="bundled scenario name or a .cfg path")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--annotated", action="store_true",
                   help="also write ground-truth-annotated frames")

    p = sub.add_parser("track", parents=[shared],
                       help="run the tracker over frames and detections")
    p.add_argument("--frames", required=True, help="directory of PGM frames")
    p.add_argument("--detections", required=True, help="detections CSV")
    p.add_argument("--out", required=True, help="output tracks CSV")
    p.add_argument("--workers", type=int, default=0,
                   help="thread workers for per-target sampling")

    p = sub.add_parser("eval", parents=[shared],
                       help="score predicted tracks against ground truth")
    p.add_argument("--gt", required=True, help="ground-truth tracks CSV")
    p.add_argument("--tracks", required=True, help="predicted tracks CSV")
    p.add_argument("--json", metavar="FILE", help="also write metrics as JSON")

    p = sub.add_parser("render", parents=[shared],
                       help="burn track boxes and ids into frames")
    p.add_argument("--frames", required=True, help="directory of PGM frames")
    p.add_argument("--tracks", required=True, help="tracks CSV")
    p.add_argument("--out", required=True, help="output directory")
    return parser


def _resolve_scenario(name: str) -> ScenarioConfig:
    if os.path.exists(name):
        return ScenarioConfig.from_file(name)
    pkg = importlib.resources.files("wamitrack.scenarios")
    candidate = pkg / f"{name}.cfg"
    if candidate.is_file():
        return ScenarioConfig.from_file(candidate)
    bundled = sorted(p.name[:-4] for p in pkg.iterdir() if p.name.endswith(".cfg"))
    raise WamitrackError(
        f"unknown scenario {name!r}; bundled scenarios: {', '.join(bundled)}")


def _load_config(args) -> PipelineConfig:
    if args.config:
        return PipelineConfig.from_file(args.config)
    return PipelineConfig()


def _cmd_simulate(args) -> int:
    scenario = _resolve_scenario(args.scenario)
    out = simulate(scenario, args.seed)
    frame_dir = os.path.join(args.out, "frames")
    os.makedirs(frame_dir, exist_ok=True)
    write_frames(frame_dir, out.frames)
    write_tracks_csv(os.path.join(args.out, "gt.csv"), out.gt_tracks,
                     with_source=False)
    write_detections_csv(os.path.join(args.out, "detections.csv"),
                         out.detections)
    if args.annotated:
        ann_dir = os.path.join(args.out, "annotated")
        os.makedirs(ann_dir, exist_ok=True)
        write_frames(ann_dir, render_annotated(out.frames, out.gt_tracks))
    print(f"wrote {len(out.frames)} frames, {len(out.gt_tracks)} tracks "
          f"to {args.out}")
    return 0


def _cmd_track(args) -> int:
    cfg = _load_config(args)
    frames = load_frames(args.frames)
    detections = read_detections_csv(args.detections)
    pool = run_tracking(frames, detections, cfg, dbt_only=args.dbt_only,
                        workers=args.workers, debug_dir=args.dump_debug)
    tracks = pool.snapshot()
    write_tracks_csv(args.out, tracks)
    n_obs = sum(len(tr.observations) for tr in tracks)
    print(f"wrote {len(tracks)} tracks ({n_obs} observations) to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    gt = read_tracks_csv(args.gt)
    pred = read_tracks_csv(args.tracks)
    report = evaluate(gt, pred)
    print(format_report(report))
    if args.json:
        with open(args.json, "w") as f:
            json.dump(report.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
    return 0


def _cmd_render(args) -> int:
    frames = load_frames(args.frames)
    tracks = read_tracks_csv(args.tracks)
    top = max((o.frame_index for tr in tracks for o in tr.observations),
              default=-1)
    if top >= len(frames):
        print(f"wamitrack: warning: tracks reference frame {top} but only "
              f"{len(frames)} frames are present; rendering the overlap",
              file=sys.stderr)
    os.makedirs(args.out, exist_ok=True)
    write_frames(args.out, render_annotated(frames, tracks))
    print(f"wrote {len(frames)} annotated frames to {args.out}")
    return 0


_COMMANDS = {
    "simulate": _cmd_simulate,
    "track": _cmd_track,
    "eval": _cmd_eval,
    "render": _cmd_render,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (WamitrackError, OSError) as exc:
        print(f"wamitrack: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
