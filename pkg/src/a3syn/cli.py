"""Command line interface.

Exit codes: 0 success, 1 failed operation or failed checks, 2 usage
errors (argparse's default).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .assets import (
    load_pose,
    load_rig_any,
    load_scene_mesh,
    save_pose,
    save_rig_package,
    verify_rig,
)
from .errors import A3SynError
from .geometry.camera import Camera
from .geometry.raster import rasterize
from .geometry.sdf import build_sdf_grid, save_sdf_grid
from .metrics import evaluate_pose, write_report
from .pipeline import PipelineConfig, run_full
from .providers import HttpProvider, MockOracleProvider
from .report import read_trace, render_figures, write_summary_tsv
from .scene import SceneContext


def _parse_vec3(text: str, what: str) -> np.ndarray:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"{what} needs 3 comma-separated numbers")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad {what}: {exc}") from exc


def _load_scene_context(args) -> SceneContext:
    verts, faces = load_scene_mesh(args.scene)
    return SceneContext.from_mesh(
        verts,
        faces,
        anchor=getattr(args, "anchor", np.zeros(3)),
        sdf_resolution=args.sdf_resolution,
        cache_dir=getattr(args, "cache_dir", None),
    )


def _cmd_ingest(args) -> int:
    rig, meta = load_rig_any(args.input)
    checks = verify_rig(rig)
    width = max(len(k) for k in checks)
    failed = False
    for name, result in checks.items():
        status = "ok" if result["ok"] else "FAIL"
        print(f"{name.ljust(width)}  {status}  {result['detail']}")
        failed = failed or not result["ok"]
    print(
        f"bones={rig.num_bones} vertices={rig.num_vertices} "
        f"triangles={len(rig.faces)}"
    )
    if failed:
        return 1
    if args.out:
        save_rig_package(args.out, rig, meta)
        print(f"wrote {args.out}")
    return 0


def _make_provider(args, rig):
    if args.provider == "http":
        if not args.provider_url:
            print("--provider-url is required with --provider http", file=sys.stderr)
            return None
        return HttpProvider(args.provider_url)
    if not args.mock_target:
        print("--mock-target is required with --provider mock", file=sys.stderr)
        return None
    hidden, _ = load_pose(args.mock_target)
    return MockOracleProvider(rig, hidden, tau=args.tau, seed=args.seed)


def _cmd_place(args) -> int:
    rig, meta = load_rig_any(args.rig)
    scene = _load_scene_context(args)
    provider = _make_provider(args, rig)
    if provider is None:
        return 1
    if args.provider == "mock" and provider.occluders is None:
        provider.occluders = scene.occluders

    config = PipelineConfig(
        prompt=args.prompt,
        image_size=args.image_size,
        selection_size=args.selection_size,
        elevations_deg=tuple(float(e) for e in args.elevations.split(",")),
        cameras_per_level=args.cameras_per_level,
        mv_rounds=args.mv_rounds,
        mv_views=args.mv_views,
        refresh_interval=args.refresh_interval,
        tau=args.tau,
        seed=args.seed,
    )
    config.optimizer.epochs_stage1 = args.epochs_stage1
    config.optimizer.epochs_stage2 = args.epochs_stage2

    result = run_full(
        rig,
        scene,
        provider,
        config,
        out_dir=args.out,
        original_joint_indices=meta.get("original_joint_indices"),
    )
    print(
        "placed: non_collision={non_collision:.3f} contact={contact}".format(
            **result.metrics
        )
    )
    print(f"pose: {Path(args.out) / 'pose.json'}")
    return 0


def _cmd_metrics(args) -> int:
    rig, _ = load_rig_any(args.rig)
    pose, _ = load_pose(args.pose)
    if len(pose.articulation) != rig.num_bones:
        print("pose bone count does not match rig", file=sys.stderr)
        return 1
    scene = _load_scene_context(args)
    metrics = evaluate_pose(rig, pose, scene)
    if args.out:
        write_report(args.out, metrics)
    print(json.dumps({**metrics, "clip_score": None}, indent=2))
    return 0


def _cmd_render(args) -> int:
    from .rig import skin_vertices

    rig, _ = load_rig_any(args.rig)
    pose, _ = load_pose(args.pose)
    if len(pose.articulation) != rig.num_bones:
        print("pose bone count does not match rig", file=sys.stderr)
        return 1
    world = skin_vertices(rig, pose)
    occluders = None
    if args.scene:
        occluders = load_scene_mesh(args.scene)

    az, el, dist = (float(x) for x in args.camera.split(","))
    center = world.mean(axis=0)
    direction = np.array(
        [
            math.cos(math.radians(el)) * math.cos(math.radians(az)),
            math.sin(math.radians(el)),
            math.cos(math.radians(el)) * math.sin(math.radians(az)),
        ]
    )
    cam = Camera(
        position=center + dist * direction,
        look_at=center,
        width=args.image_size,
        height=args.image_size,
    )
    out = rasterize(world, rig.faces, cam, occluders)
    from PIL import Image

    Image.fromarray(out.color).save(args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_sdf_cache(args) -> int:
    verts, faces = load_scene_mesh(args.scene)
    grid = build_sdf_grid(verts, faces, resolution=args.resolution)
    save_sdf_grid(args.out, grid)
    print(
        f"wrote {args.out}: dims={grid.dims} voxel={grid.voxel_size:.5f}"
    )
    return 0


def _cmd_report(args) -> int:
    records = read_trace(args.trace)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    figures = render_figures(records, out_dir)
    tsv = write_summary_tsv(out_dir / "summary.tsv", records)
    print(tsv.read_text(), end="")
    for fig in figures:
        print(f"figure: {fig}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="a3syn",
        description="Affordance-aware articulation synthesis for rigged assets",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a rigged asset and package it")
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=None, help="write a packaged .npz rig")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("place", help="run the two-stage placement pipeline")
    p.add_argument("--rig", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--anchor", type=lambda s: _parse_vec3(s, "anchor"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--provider", choices=("mock", "http"), default="mock")
    p.add_argument("--provider-url", default=None)
    p.add_argument("--mock-target", default=None, help="hidden pose json for mock")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--image-size", type=int, default=512)
    p.add_argument("--selection-size", type=int, default=96)
    p.add_argument("--elevations", default="10,25,40,55,70")
    p.add_argument("--cameras-per-level", type=int, default=20)
    p.add_argument("--mv-rounds", type=int, default=3)
    p.add_argument("--mv-views", type=int, default=4)
    p.add_argument("--refresh-interval", type=int, default=20)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--epochs-stage1", type=int, default=200)
    p.add_argument("--epochs-stage2", type=int, default=100)
    p.add_argument("--sdf-resolution", type=int, default=128)
    p.add_argument("--cache-dir", default=None)
    p.set_defaults(func=_cmd_place)

    p = sub.add_parser("metrics", help="score a pose against a scene")
    p.add_argument("--rig", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--sdf-resolution", type=int, default=128)
    p.add_argument("--cache-dir", default=None)
    p.add_argument("--out", default=None, help="also write report.json here")
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("render", help="render a posed rig to a png")
    p.add_argument("--rig", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--scene", default=None)
    p.add_argument(
        "--camera", required=True, help="azimuth_deg,elevation_deg,distance"
    )
    p.add_argument("--image-size", type=int, default=512)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("sdf-cache", help="precompute a scene distance field")
    p.add_argument("--scene", required=True)
    p.add_argument("--resolution", type=int, default=128)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sdf_cache)

    p = sub.add_parser("report", help="figures and summary from a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except A3SynError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
