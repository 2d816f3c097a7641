"""Two-stage placement: single-view placement then multi-view refinement.

Stage 1 picks the least occluded camera on a ring, inpaints the dilated
object silhouette once at full denoise, and optimizes the pose against
that target. Stage 2 repeats for several rounds with a decaying partial
denoise over a handful of well-scoring views, tiled through the backend
in one request when exactly four views are kept.

The per-iteration objective keeps its correspondence context frozen and
rebuilds it every refresh_interval iterations from the current pose.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .correspondence import bone_correspondences, upsample_features
from .errors import NotVisibleError
from .geometry.camera import Camera, sample_camera_ring
from .geometry.raster import dilate_mask, rasterize, select_best_view
from .metrics import evaluate_pose, write_report
from .objective import (
    LossWeights,
    ObjectiveContext,
    ViewContext,
    evaluate_with_gradient,
)
from .optimizer import OptimizerConfig, run_stage
from .providers.base import Provider, select_candidate
from .rig import (
    PoseState,
    SkinnedRig,
    attribute_vertices_to_bones,
    hierarchy_levels,
    skin_vertices,
)
from .scene import SceneContext


@dataclass
class PipelineConfig:
    prompt: str
    elevations_deg: tuple = (10.0, 25.0, 40.0, 55.0, 70.0)
    cameras_per_level: int = 20
    camera_distance: float | None = None  # default 2.5 x bounding radius
    image_size: int = 512
    selection_size: int = 96  # render size while scoring candidate views
    fov_deg: float = 50.0
    dilation_fraction: float = 0.12
    tau: float = 0.5
    weights: LossWeights = field(default_factory=LossWeights)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    refresh_interval: int = 20
    candidates: int = 4
    max_retries: int = 2
    mv_rounds: int = 3
    mv_views: int = 4
    gamma_schedule: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.image_size < 8 or self.selection_size < 8:
            raise ValueError("image sizes must be at least 8 px")
        if self.refresh_interval < 1:
            raise ValueError("refresh_interval must be positive")
        if self.mv_rounds < 0 or self.mv_views < 1:
            raise ValueError("mv_rounds must be >= 0 and mv_views >= 1")
        if self.gamma_schedule is None:
            if self.mv_rounds == 0:
                self.gamma_schedule = ()
            elif self.mv_rounds == 1:
                self.gamma_schedule = (0.8,)
            else:
                self.gamma_schedule = tuple(
                    np.linspace(0.8, 0.6, self.mv_rounds).tolist()
                )
        self.gamma_schedule = tuple(float(g) for g in self.gamma_schedule)
        if len(self.gamma_schedule) != self.mv_rounds:
            raise ValueError("gamma_schedule length must equal mv_rounds")
        for g in self.gamma_schedule:
            if not 0.0 <= g <= 1.0:
                raise ValueError("gamma values must lie in [0, 1]")
        if any(
            b > a for a, b in zip(self.gamma_schedule, self.gamma_schedule[1:])
        ):
            raise ValueError("gamma_schedule must be non-increasing")


@dataclass
class PlacementResult:
    pose: PoseState
    trace: list
    metrics: dict
    camera: dict  # stage-1 camera description
    artifacts: dict


class _ArtifactWriter:
    def __init__(self, out_dir):
        self.root = Path(out_dir) if out_dir is not None else None
        self.paths: dict[str, str] = {}
        if self.root is not None:
            self.root.mkdir(parents=True, exist_ok=True)

    def image(self, rel: str, array: np.ndarray) -> None:
        if self.root is None:
            return
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        arr = np.asarray(array)
        if arr.dtype == bool:
            arr = (arr * np.uint8(255)).astype(np.uint8)
        Image.fromarray(arr).save(path)
        self.paths[rel] = str(path)

    def text(self, rel: str, content: str) -> Path | None:
        if self.root is None:
            return None
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(content)
        self.paths[rel] = str(path)
        return path


def tile_grid(images: list[np.ndarray]) -> np.ndarray:
    """Four equally sized images into one 2x2 sheet, row-major."""
    if len(images) != 4:
        raise ValueError("tiling expects exactly 4 images")
    arrs = [np.asarray(im) for im in images]
    shape = arrs[0].shape
    if any(a.shape != shape for a in arrs):
        raise ValueError("tiled images must share a shape")
    top = np.concatenate([arrs[0], arrs[1]], axis=1)
    bottom = np.concatenate([arrs[2], arrs[3]], axis=1)
    return np.concatenate([top, bottom], axis=0)


def split_grid(image: np.ndarray) -> list[np.ndarray]:
    """Inverse of tile_grid."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    if h % 2 or w % 2:
        raise ValueError("tiled image dimensions must be even")
    vh, vw = h // 2, w // 2
    return [
        image[:vh, :vw].copy(),
        image[:vh, vw:].copy(),
        image[vh:, :vw].copy(),
        image[vh:, vw:].copy(),
    ]


def _full_res(camera: Camera, size: int, fov: float) -> Camera:
    return Camera(
        position=camera.position,
        look_at=camera.look_at,
        width=size,
        height=size,
        fov_deg=fov,
    )


def _dilation_radius(config: PipelineConfig) -> int:
    return max(1, round(config.dilation_fraction * config.image_size))


def _view_context(
    rig: SkinnedRig,
    pose: PoseState,
    camera: Camera,
    scene: SceneContext,
    provider: Provider,
    attribution: np.ndarray,
    target_up: np.ndarray,
    tau: float,
):
    """Render the current pose and correspond it against a fixed target."""
    world = skin_vertices(rig, pose)
    out = rasterize(world, rig.faces, camera, scene.occluders)
    provider.observe_view(camera, world)
    query_up = upsample_features(
        provider.extract_features(out.color), camera.height, camera.width
    )
    corr = bone_correspondences(
        out, attribution, query_up, target_up, tau, rig.num_bones
    )
    return ViewContext(camera=camera, correspondences=corr), out


def _candidate_cameras(
    config: PipelineConfig, center: np.ndarray, distance: float
) -> list[Camera]:
    return sample_camera_ring(
        center,
        distance,
        config.elevations_deg,
        config.cameras_per_level,
        config.selection_size,
        config.selection_size,
        config.fov_deg,
    )


def _ring_distance(config: PipelineConfig, world: np.ndarray) -> float:
    if config.camera_distance is not None:
        return float(config.camera_distance)
    center = world.mean(axis=0)
    radius = float(np.linalg.norm(world - center, axis=1).max())
    return 2.5 * max(radius, 1e-6)


def stage1_place(
    rig: SkinnedRig,
    scene: SceneContext,
    provider: Provider,
    config: PipelineConfig,
    rng: np.random.Generator,
    writer: _ArtifactWriter,
) -> tuple[PoseState, list, Camera]:
    pose = PoseState.identity(rig.num_bones, translation=scene.anchor)
    world = skin_vertices(rig, pose)
    distance = _ring_distance(config, world)

    ring = _candidate_cameras(config, scene.anchor, distance)
    best, _ = select_best_view(ring, world, rig.faces, scene.occluders)
    camera = _full_res(ring[best], config.image_size, config.fov_deg)

    out = rasterize(world, rig.faces, camera, scene.occluders)
    if not out.visible.any():
        raise NotVisibleError("object not visible from the selected camera")
    mask = dilate_mask(out.silhouette, _dilation_radius(config))

    provider.observe_view(camera, world)

    def make_batch(_attempt=None):
        provider.observe_view(camera, world)
        return [
            provider.inpaint(
                out.color, mask, config.prompt, 1.0, int(rng.integers(2**31))
            )
            for _ in range(config.candidates)
        ]

    target_img, _ = select_candidate(
        provider, make_batch(), config.prompt, config.max_retries, make_batch
    )
    target_up = upsample_features(
        provider.extract_features(target_img), camera.height, camera.width
    )

    writer.image("stage1/render.png", out.color)
    writer.image("stage1/mask.png", mask)
    writer.image("stage1/target.png", target_img)

    attribution = attribute_vertices_to_bones(rig.weights)
    levels = hierarchy_levels(rig.skeleton).levels
    state = {"view": None}

    def objective_fn(p: PoseState, it: int):
        if it % config.refresh_interval == 0:
            state["view"], _ = _view_context(
                rig, p, camera, scene, provider, attribution, target_up, config.tau
            )
        ctx = ObjectiveContext(
            views=[state["view"]],
            weights=config.weights,
            levels=levels,
            sdf=scene.sdf,
            stage=1,
        )
        return evaluate_with_gradient(rig, p, ctx)

    pose, trace = run_stage(
        pose, objective_fn, config.optimizer, config.optimizer.epochs_stage1, stage=1
    )
    return pose, trace, camera


def _round_views(
    rig: SkinnedRig,
    world: np.ndarray,
    scene: SceneContext,
    config: PipelineConfig,
    rng: np.random.Generator,
) -> list[Camera]:
    """Score a fresh ring, keep the better half, sample mv_views of them."""
    distance = _ring_distance(config, world)
    center = world.mean(axis=0)
    ring = _candidate_cameras(config, center, distance)
    _, scores = select_best_view(ring, world, rig.faces, scene.occluders)
    keep = max(1, math.ceil(len(ring) / 2))
    top = np.argsort(-scores, kind="stable")[:keep]
    top = top[scores[top] > 0.0]
    if top.size == 0:
        raise NotVisibleError("object not visible in refinement round")
    count = min(config.mv_views, top.size)
    chosen = rng.choice(top, size=count, replace=False)
    return [_full_res(ring[int(i)], config.image_size, config.fov_deg) for i in chosen]


def _inpaint_views(
    provider: Provider,
    config: PipelineConfig,
    cameras: list[Camera],
    renders: list,
    masks: list[np.ndarray],
    world: np.ndarray,
    gamma: float,
    seed: int,
) -> list[np.ndarray]:
    if len(cameras) == 4:
        provider.observe_view(cameras, world)
        sheet = provider.inpaint(
            tile_grid([r.color for r in renders]),
            tile_grid(masks),
            config.prompt,
            gamma,
            seed,
        )
        return split_grid(sheet)
    targets = []
    for cam, render, mask in zip(cameras, renders, masks):
        provider.observe_view(cam, world)
        targets.append(
            provider.inpaint(render.color, mask, config.prompt, gamma, seed)
        )
    return targets


def stage2_refine(
    rig: SkinnedRig,
    scene: SceneContext,
    provider: Provider,
    config: PipelineConfig,
    pose: PoseState,
    rng: np.random.Generator,
    writer: _ArtifactWriter,
) -> tuple[PoseState, list]:
    attribution = attribute_vertices_to_bones(rig.weights)
    levels = hierarchy_levels(rig.skeleton).levels
    trace: list = []

    for rnd in range(config.mv_rounds):
        gamma = config.gamma_schedule[rnd]
        world = skin_vertices(rig, pose)
        cameras = _round_views(rig, world, scene, config, rng)
        renders = [
            rasterize(world, rig.faces, cam, scene.occluders) for cam in cameras
        ]
        radius = _dilation_radius(config)
        masks = [dilate_mask(r.silhouette, radius) for r in renders]

        for m, (render, mask) in enumerate(zip(renders, masks)):
            writer.image(f"round{rnd}/view{m}/render.png", render.color)
            writer.image(f"round{rnd}/view{m}/mask.png", mask)

        target_ups = None
        for attempt in range(2):
            targets = _inpaint_views(
                provider,
                config,
                cameras,
                renders,
                masks,
                world,
                gamma,
                int(rng.integers(2**31)),
            )
            ups = [
                upsample_features(
                    provider.extract_features(t), config.image_size, config.image_size
                )
                for t in targets
            ]
            views = [
                _view_context(
                    rig, pose, cam, scene, provider, attribution, up, config.tau
                )[0]
                for cam, up in zip(cameras, ups)
            ]
            ctx = ObjectiveContext(
                views=views,
                weights=config.weights,
                levels=levels,
                sdf=scene.sdf,
                stage=2,
            )
            breakdown, _ = evaluate_with_gradient(rig, pose, ctx)
            if breakdown.n_valid_views > 0:
                target_ups = ups
                for m, t in enumerate(targets):
                    writer.image(f"round{rnd}/view{m}/target.png", t)
                break
            # every view blew past the consistency threshold; one redo
            if attempt == 0:
                continue
        if target_ups is None:
            trace.append({"stage": 2, "round": rnd, "event": "void_round"})
            continue

        state = {"views": None}

        def objective_fn(p: PoseState, it: int, _ups=target_ups, _cams=cameras):
            if it % config.refresh_interval == 0:
                state["views"] = [
                    _view_context(
                        rig, p, cam, scene, provider, attribution, up, config.tau
                    )[0]
                    for cam, up in zip(_cams, _ups)
                ]
            ctx_it = ObjectiveContext(
                views=state["views"],
                weights=config.weights,
                levels=levels,
                sdf=scene.sdf,
                stage=2,
            )
            return evaluate_with_gradient(rig, p, ctx_it)

        pose, tr = run_stage(
            pose, objective_fn, config.optimizer, config.optimizer.epochs_stage2, stage=2
        )
        for rec in tr:
            rec["round"] = rnd
        trace.extend(tr)
    return pose, trace


def run_full(
    rig: SkinnedRig,
    scene: SceneContext,
    provider: Provider,
    config: PipelineConfig,
    out_dir=None,
    bone_names: list[str] | None = None,
    original_joint_indices: list[int] | None = None,
) -> PlacementResult:
    """End-to-end placement; artifacts land under out_dir when given."""
    from .assets.pose_io import pose_to_dict
    from .report import render_figures, write_trace

    rng = np.random.default_rng(config.seed)
    writer = _ArtifactWriter(out_dir)

    pose, trace, camera = stage1_place(rig, scene, provider, config, rng, writer)
    if config.mv_rounds > 0:
        pose, trace2 = stage2_refine(rig, scene, provider, config, pose, rng, writer)
        trace = trace + trace2

    metrics = evaluate_pose(rig, pose, scene)

    names = bone_names if bone_names is not None else list(rig.skeleton.names)
    pose_doc = pose_to_dict(pose, names, original_joint_indices)
    writer.text("pose.json", json.dumps(pose_doc, indent=2) + "\n")
    if writer.root is not None:
        write_trace(writer.root / "trace.jsonl", trace)
        writer.paths["trace.jsonl"] = str(writer.root / "trace.jsonl")
        report_path = write_report(writer.root / "report.json", metrics)
        writer.paths["report.json"] = str(report_path)
        for fig in render_figures(trace, writer.root / "figures"):
            writer.paths[f"figures/{fig.name}"] = str(fig)

    return PlacementResult(
        pose=pose,
        trace=trace,
        metrics=metrics,
        camera=camera.describe(),
        artifacts=dict(writer.paths),
    )
