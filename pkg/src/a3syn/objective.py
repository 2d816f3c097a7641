"""Placement losses and their analytic gradients.

Per evaluation the context is frozen: visibility sets, bone membership,
and target centroids stay fixed while vertices, projections, and the
loss respond to the pose. Gradients run in reverse through projection,
the global similarity, blend skinning, and the kinematic chain, so cost
stays linear in bone count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .correspondence import CorrespondenceSet
from .geometry.camera import Camera
from .geometry.sdf import SdfGrid, query_sdf, query_sdf_gradient
from .rig import (
    PoseState,
    SkinnedRig,
    axis_angle_to_matrix,
    forward_kinematics,
    rotation_derivatives,
)


@dataclass
class LossWeights:
    bc: float = 1.0
    mvbc: float = 1.0
    rp: float = 100.0
    penetration: float = 1000.0
    no_contact: float = 1000.0
    alpha: float = 1.2  # per-level articulation decay base
    epsilon_t: float = 1000.0  # view consistency threshold


@dataclass
class ViewContext:
    camera: Camera
    correspondences: CorrespondenceSet


@dataclass
class ObjectiveContext:
    views: list[ViewContext]
    weights: LossWeights
    levels: np.ndarray  # (B,) hierarchy depth per bone
    sdf: SdfGrid | None = None
    stage: int = 1  # 1: single view, 2: multi-view consensus

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.int64)
        if self.stage not in (1, 2):
            raise ValueError("stage must be 1 or 2")
        if not self.views:
            raise ValueError("objective needs at least one view")


@dataclass
class LossBreakdown:
    total: float
    bc: float
    mvbc: float
    rp: float
    penetration: float
    no_contact: float
    per_view_bc: list = field(default_factory=list)
    n_valid_views: int = 0

    def as_dict(self) -> dict:
        return {
            "total": self.total,
            "bc": self.bc,
            "mvbc": self.mvbc,
            "rp": self.rp,
            "penetration": self.penetration,
            "no_contact": self.no_contact,
            "per_view_bc": list(self.per_view_bc),
            "n_valid_views": self.n_valid_views,
        }


@dataclass
class PoseGradient:
    articulation: np.ndarray  # (B, 3)
    translation: np.ndarray  # (3,)
    rotation: np.ndarray  # (3,)
    log_scale: float  # d/d log(scale)


def loss_bc(
    source: np.ndarray, target: np.ndarray, valid: np.ndarray
) -> float:
    """Mean squared centroid displacement over valid bones."""
    valid = np.asarray(valid, dtype=bool)
    n = int(valid.sum())
    if n == 0:
        return 0.0
    diff = np.asarray(source)[valid] - np.asarray(target)[valid]
    return float(np.sum(diff**2) / n)


def loss_rp(articulation: np.ndarray, levels: np.ndarray, alpha: float) -> float:
    """Articulation magnitude prior, weighted by alpha^level per bone."""
    articulation = np.asarray(articulation, dtype=np.float64)
    scale = np.power(alpha, np.asarray(levels, dtype=np.float64))
    return float(np.mean(scale * np.sum(articulation**2, axis=1)))


def loss_sdf(psi: np.ndarray) -> tuple[float, float]:
    """(penetration, no_contact) from per-vertex signed distances.

    Any non-positive value switches to the penetration branch; otherwise
    the smallest clearance is reported so contact can be encouraged.
    """
    psi = np.asarray(psi, dtype=np.float64)
    if psi.size == 0:
        return 0.0, 0.0
    if np.all(psi > 0):
        return 0.0, float(psi.min())
    return float(np.sum(-np.minimum(psi, 0.0))), 0.0


def loss_mvbc(per_view_bc, epsilon_t: float) -> tuple[float, int]:
    """Mean of per-view BC losses below epsilon_t; (value, n_valid)."""
    vals = np.asarray(list(per_view_bc), dtype=np.float64)
    mask = vals < epsilon_t
    n = int(mask.sum())
    if n == 0:
        return 0.0, 0
    return float(vals[mask].mean()), n


def _source_centroids(
    camera: Camera, world: np.ndarray, corr: CorrespondenceSet
) -> tuple[np.ndarray, list]:
    """Re-project each bone's kept vertices and average, plus jacobians."""
    num_bones = len(corr.valid)
    centroids = np.zeros((num_bones, 2))
    per_bone = []
    for b in range(num_bones):
        verts = corr.bone_vertices[b]
        if not corr.valid[b] or len(verts) == 0:
            per_bone.append(None)
            continue
        uv, _ = camera.project(world[verts])
        centroids[b] = uv.mean(axis=0)
        per_bone.append(verts)
    return centroids, per_bone


def evaluate_with_gradient(
    rig: SkinnedRig, pose: PoseState, context: ObjectiveContext
) -> tuple[LossBreakdown, PoseGradient]:
    """Forward losses and reverse-mode gradients in one pass."""
    w = context.weights
    num_bones = rig.num_bones

    globals_ = forward_kinematics(rig.skeleton, pose.articulation)
    smat = globals_ @ rig.inverse_bind
    blended = np.einsum("vb,bij->vij", rig.weights, smat[:, :3, :])
    local = (
        np.einsum("vij,vj->vi", blended[:, :, :3], rig.vertices)
        + blended[:, :, 3]
    )
    rot_g = axis_angle_to_matrix(pose.rotation)
    world = pose.scale * (local @ rot_g.T) + pose.translation

    x_bar = np.zeros_like(world)

    # -- view consistency terms ------------------------------------------
    per_view_bc = []
    view_data = []
    for vc in context.views:
        centroids, members = _source_centroids(vc.camera, world, vc.correspondences)
        bc = loss_bc(centroids, vc.correspondences.target, vc.correspondences.valid)
        per_view_bc.append(bc)
        view_data.append((centroids, members))

    if context.stage == 1:
        bc_val = per_view_bc[0]
        mv_val, n_valid_views = 0.0, 1
        view_weights = [w.bc] + [0.0] * (len(context.views) - 1)
    else:
        mv_val, n_valid_views = loss_mvbc(per_view_bc, w.epsilon_t)
        bc_val = 0.0
        view_weights = [
            w.mvbc / n_valid_views if n_valid_views and bc < w.epsilon_t else 0.0
            for bc in per_view_bc
        ]

    for vc, (centroids, members), lam in zip(context.views, view_data, view_weights):
        if lam == 0.0:
            continue
        corr = vc.correspondences
        n_vis = corr.n_visible
        if n_vis == 0:
            continue
        for b in range(num_bones):
            verts = members[b] if b < len(members) else None
            if verts is None:
                continue
            g_centroid = lam * (2.0 / n_vis) * (centroids[b] - corr.target[b])
            jac = vc.camera.projection_jacobian(world[verts])
            x_bar[verts] += np.einsum(
                "vji,j->vi", jac, g_centroid / len(verts)
            )

    # -- scene distance terms --------------------------------------------
    pen_val, nc_val = 0.0, 0.0
    if context.sdf is not None:
        psi = query_sdf(context.sdf, world)
        pen_val, nc_val = loss_sdf(psi)
        if pen_val > 0.0:
            inside = psi < 0.0
            if inside.any():
                x_bar[inside] += -w.penetration * query_sdf_gradient(
                    context.sdf, world[inside]
                )
        elif nc_val > 0.0:
            v_star = int(np.argmin(psi))
            x_bar[v_star] += w.no_contact * query_sdf_gradient(
                context.sdf, world[v_star : v_star + 1]
            )[0]

    # -- backprop through the global similarity --------------------------
    t_bar = x_bar.sum(axis=0)
    y_bar = pose.scale * (x_bar @ rot_g)
    s_bar = float(np.einsum("vi,vi->", x_bar, local @ rot_g.T))
    log_s_bar = s_bar * pose.scale
    rot_derivs = rotation_derivatives(pose.rotation, rot_g)
    rotated = np.einsum("kij,vj->vki", rot_derivs, local)
    rot_bar = pose.scale * np.einsum("vi,vki->k", x_bar, rotated)

    # -- backprop through skinning and the chain --------------------------
    verts_h = np.concatenate([rig.vertices, np.ones((rig.num_vertices, 1))], axis=1)
    s_mat_bar = np.einsum("vb,vi,vj->bij", rig.weights, y_bar, verts_h)
    g_bar = np.zeros((num_bones, 4, 4))
    g_bar[:, :3, :] = s_mat_bar @ np.transpose(rig.inverse_bind, (0, 2, 1))[:, :, :]

    art_rots = axis_angle_to_matrix(pose.articulation)
    art_bar = np.zeros((num_bones, 3))
    parents = rig.skeleton.parents
    rest_local = rig.skeleton.rest_local
    for i in reversed(range(num_bones)):
        p = parents[i]
        parent_global = globals_[p] if p >= 0 else np.eye(4)
        pre = parent_global @ rest_local[i]
        q_bar = pre.T @ g_bar[i]
        derivs = rotation_derivatives(pose.articulation[i], art_rots[i])
        art_bar[i] = np.einsum("ij,kij->k", q_bar[:3, :3], derivs)
        if p >= 0:
            local_mat = np.eye(4)
            local_mat[:3, :3] = art_rots[i]
            g_bar[p] += g_bar[i] @ (rest_local[i] @ local_mat).T

    # -- articulation prior ------------------------------------------------
    alpha_pow = np.power(w.alpha, context.levels.astype(np.float64))
    rp_val = loss_rp(pose.articulation, context.levels, w.alpha)
    art_bar += w.rp * (2.0 / num_bones) * alpha_pow[:, None] * pose.articulation

    total = (
        w.bc * bc_val
        + w.mvbc * mv_val
        + w.rp * rp_val
        + w.penetration * pen_val
        + w.no_contact * nc_val
    )
    breakdown = LossBreakdown(
        total=float(total),
        bc=float(bc_val),
        mvbc=float(mv_val),
        rp=float(rp_val),
        penetration=float(pen_val),
        no_contact=float(nc_val),
        per_view_bc=[float(v) for v in per_view_bc],
        n_valid_views=n_valid_views,
    )
    grad = PoseGradient(
        articulation=art_bar,
        translation=t_bar,
        rotation=rot_bar,
        log_scale=float(log_s_bar),
    )
    return breakdown, grad


def evaluate(
    rig: SkinnedRig, pose: PoseState, context: ObjectiveContext
) -> LossBreakdown:
    return evaluate_with_gradient(rig, pose, context)[0]
