import numpy as np
import pytest

import oracles
from a3syn.correspondence import CorrespondenceSet
from a3syn.geometry.camera import Camera
from a3syn.geometry.sdf import build_sdf_grid
from a3syn.objective import (
    LossWeights,
    ObjectiveContext,
    ViewContext,
    evaluate,
    evaluate_with_gradient,
    loss_bc,
    loss_mvbc,
    loss_rp,
    loss_sdf,
)
from a3syn.rig import PoseState, Skeleton, SkinnedRig
from conftest import make_random_rig, slab_mesh


# ---------------------------------------------------------------------------
# frozen worked examples


def test_loss_bc_worked_example():
    got = loss_bc(
        oracles.BC_EXAMPLE_SOURCE, oracles.BC_EXAMPLE_TARGET, oracles.BC_EXAMPLE_VALID
    )
    assert abs(got - oracles.BC_EXAMPLE_VALUE) < 1e-9


def test_loss_bc_no_valid_bones():
    assert loss_bc(np.zeros((2, 2)), np.ones((2, 2)), np.zeros(2, bool)) == 0.0


def test_loss_rp_worked_example():
    got = loss_rp(
        oracles.RP_EXAMPLE_ART, oracles.RP_EXAMPLE_LEVELS, oracles.RP_EXAMPLE_ALPHA
    )
    assert abs(got - oracles.RP_EXAMPLE_VALUE) < 1e-9


def test_loss_rp_zero_articulation():
    assert loss_rp(np.zeros((4, 3)), np.arange(4), 1.2) == 0.0


def test_loss_mvbc_worked_example():
    value, n = loss_mvbc(oracles.MVBC_EXAMPLE_VALUES, oracles.MVBC_EXAMPLE_EPSILON)
    assert abs(value - oracles.MVBC_EXAMPLE_VALUE) < 1e-9
    assert n == 3


def test_loss_mvbc_all_filtered():
    assert loss_mvbc([2000.0, 5000.0], 1000.0) == (0.0, 0)


def test_loss_sdf_branches():
    pen, nc = loss_sdf(np.array([0.5, 0.9, 2.0]))
    assert pen == 0.0 and nc == 0.5
    pen, nc = loss_sdf(np.array([0.5, -0.2, -0.3]))
    assert abs(pen - 0.5) < 1e-12 and nc == 0.0
    # exact touch: neither branch fires
    pen, nc = loss_sdf(np.array([0.0, 0.5]))
    assert pen == 0.0 and nc == 0.0
    assert loss_sdf(np.zeros(0)) == (0.0, 0.0)


# ---------------------------------------------------------------------------
# full-evaluation scenario reproducing the hand-derived totals


def _chain_rig(rest_vertices, owners, num_bones):
    parents = np.array([-1] + list(range(num_bones - 1)))
    rest_local = np.tile(np.eye(4), (num_bones, 1, 1))
    weights = np.zeros((len(rest_vertices), num_bones))
    weights[np.arange(len(rest_vertices)), owners] = 1.0
    return SkinnedRig(
        skeleton=Skeleton(parents=parents, rest_local=rest_local),
        vertices=np.asarray(rest_vertices, dtype=np.float64),
        faces=np.empty((0, 3), dtype=np.int64),
        weights=weights,
        inverse_bind=np.tile(np.eye(4), (num_bones, 1, 1)),
    )


def _point_on_pixel_ray(cam, u, v, y_target):
    """World point projecting to pixel (u, v) at height y_target."""
    d_cam = np.array(
        [(u - cam.principal[0]) / cam.focal, (v - cam.principal[1]) / cam.focal, 1.0]
    )
    d = cam.world_to_camera.T @ d_cam
    t = (y_target - cam.position[1]) / d[1]
    return cam.position + t * d


def exact_stage1_scenario():
    """Two-bone setup whose loss components hit the hand-derived values.

    bc lands on 12.5, rp on 0.029, penetration on 0 and no-contact on
    0.5, so the default weights combine to a 515.4 total.
    """
    cam = Camera(position=(0.0, 2.5, -1.6), look_at=(0.0, 0.3, 0.2), width=32, height=32)
    p0 = _point_on_pixel_ray(cam, 10.0, 20.0, 0.9)
    p1 = _point_on_pixel_ray(cam, 4.0, 22.0, 0.5)

    articulation = oracles.RP_EXAMPLE_ART
    r0 = oracles.rotation_from_axis_angle(articulation[0])
    r1 = oracles.rotation_from_axis_angle(articulation[1])
    # undo the chain rotations so the posed vertices land exactly on p0, p1
    rest = [r0.T @ p0, r1.T @ (r0.T @ p1)]
    rig = _chain_rig(rest, owners=[0, 1], num_bones=2)
    pose = PoseState(
        articulation=articulation.copy(),
        translation=np.zeros(3),
        rotation=np.zeros(3),
        scale=1.0,
    )

    src0, _ = cam.project(p0[None])
    src1, _ = cam.project(p1[None])
    corr = CorrespondenceSet(
        source=np.stack([src0[0], src1[0]]),
        target=np.stack([src0[0] + [3.0, 4.0], src1[0]]),
        valid=np.array([True, True]),
        bone_vertices=[np.array([0]), np.array([1])],
    )
    # linear field psi = y with exactly representable node values, so the
    # clearance at y = 0.5 reads 0.5 to the last bit (a triangulated grid
    # carries float32 rounding of order 1e-8)
    from a3syn.geometry.sdf import SdfGrid

    ys = -0.5 + 0.25 * np.arange(9)
    values = np.broadcast_to(ys[None, :, None], (17, 9, 17)).astype(np.float32).copy()
    sdf = SdfGrid(origin=np.array([-2.0, -0.5, -2.0]), voxel_size=0.25, values=values)
    context = ObjectiveContext(
        views=[ViewContext(camera=cam, correspondences=corr)],
        weights=LossWeights(),
        levels=np.array([0, 1]),
        sdf=sdf,
        stage=1,
    )
    return rig, pose, context


def test_stage1_components_and_total_match_hand_values():
    rig, pose, context = exact_stage1_scenario()
    breakdown = evaluate(rig, pose, context)
    assert abs(breakdown.bc - 12.5) < 1e-9
    assert abs(breakdown.rp - 0.029) < 1e-9
    assert breakdown.penetration == 0.0
    assert abs(breakdown.no_contact - 0.5) < 1e-9
    assert abs(breakdown.total - 515.4) < 1e-9


def test_evaluate_matches_evaluate_with_gradient():
    rig, pose, context = exact_stage1_scenario()
    b1 = evaluate(rig, pose, context)
    b2, _ = evaluate_with_gradient(rig, pose, context)
    assert b1.total == b2.total


# ---------------------------------------------------------------------------
# analytic gradients against central finite differences


def _random_context(rng, rig, pose, stage=1, n_views=1, sdf=None, target_scale=20.0):
    from a3syn.rig import hierarchy_levels, skin_vertices

    world = skin_vertices(rig, pose)
    views = []
    for v in range(n_views):
        angle = 2 * np.pi * v / max(n_views, 1)
        cam = Camera(
            position=world.mean(axis=0)
            + 8.0 * np.array([np.sin(angle), 0.25, -np.cos(angle)]),
            look_at=world.mean(axis=0),
            width=64,
            height=64,
        )
        num_bones = rig.num_bones
        source = np.zeros((num_bones, 2))
        target = np.zeros((num_bones, 2))
        valid = np.zeros(num_bones, dtype=bool)
        bone_vertices = []
        for b in range(num_bones):
            members = np.nonzero(rig.weights[:, b] > 0.2)[0]
            if members.size == 0 or rng.random() < 0.2:
                bone_vertices.append(np.empty(0, dtype=np.int64))
                continue
            uv, _ = cam.project(world[members])
            source[b] = uv.mean(axis=0)
            target[b] = source[b] + rng.normal(scale=target_scale, size=2)
            valid[b] = True
            bone_vertices.append(members)
        views.append(
            ViewContext(
                camera=cam,
                correspondences=CorrespondenceSet(source, target, valid, bone_vertices),
            )
        )
    return ObjectiveContext(
        views=views,
        weights=LossWeights(),
        levels=hierarchy_levels(rig.skeleton).levels,
        sdf=sdf,
        stage=stage,
    )


def _pack(pose):
    return np.concatenate(
        [
            pose.articulation.ravel(),
            pose.translation,
            pose.rotation,
            [np.log(pose.scale)],
        ]
    )


def _unpack(x, num_bones):
    return PoseState(
        articulation=x[: num_bones * 3].reshape(num_bones, 3).copy(),
        translation=x[num_bones * 3 : num_bones * 3 + 3].copy(),
        rotation=x[num_bones * 3 + 3 : num_bones * 3 + 6].copy(),
        scale=float(np.exp(x[-1])),
    )


def _flat_grad(grad):
    return np.concatenate(
        [grad.articulation.ravel(), grad.translation, grad.rotation, [grad.log_scale]]
    )


def _check_gradient(rig, pose, context, tol=1e-3):
    _, grad = evaluate_with_gradient(rig, pose, context)
    analytic = _flat_grad(grad)

    def f(x):
        return evaluate(rig, _unpack(x, rig.num_bones), context).total

    numeric = oracles.finite_difference(f, _pack(pose), h=1e-4)
    rel = oracles.relative_errors(analytic, numeric)
    assert rel.max() < tol, f"max rel err {rel.max():.2e}"


def test_gradient_view_terms_only(rng):
    for seed in range(3):
        local = np.random.default_rng(100 + seed)
        rig = make_random_rig(local, max_bones=6, max_vertices=40)
        pose = PoseState(
            articulation=local.normal(scale=0.3, size=(rig.num_bones, 3)),
            translation=local.normal(scale=0.5, size=3),
            rotation=local.normal(scale=0.3, size=3),
            scale=float(np.exp(local.normal(scale=0.15))),
        )
        context = _random_context(local, rig, pose, stage=1, n_views=1)
        _check_gradient(rig, pose, context)


def test_gradient_with_no_contact_branch(rng):
    verts, faces = slab_mesh(half_extent=6.0, thickness=1.0)
    sdf = build_sdf_grid(verts, faces, resolution=48)
    local = np.random.default_rng(7)
    rig = make_random_rig(local, max_bones=5, max_vertices=30)
    pose = PoseState(
        articulation=local.normal(scale=0.2, size=(rig.num_bones, 3)),
        translation=np.array([0.0, 6.0, 0.0]),  # everything well above the slab
        rotation=local.normal(scale=0.2, size=3),
        scale=1.0,
    )
    context = _random_context(local, rig, pose, stage=1, n_views=1, sdf=sdf)
    breakdown = evaluate(rig, pose, context)
    assert breakdown.no_contact > 0 and breakdown.penetration == 0
    _check_gradient(rig, pose, context)


def test_gradient_with_penetration_branch(rng):
    verts, faces = slab_mesh(half_extent=6.0, thickness=4.0)
    sdf = build_sdf_grid(verts, faces, resolution=48)
    local = np.random.default_rng(13)
    rig = make_random_rig(local, max_bones=5, max_vertices=30)
    pose = PoseState(
        articulation=local.normal(scale=0.2, size=(rig.num_bones, 3)),
        translation=np.array([0.0, 0.0, 0.0]),  # straddles the slab top
        rotation=np.zeros(3),
        scale=1.0,
    )
    context = _random_context(local, rig, pose, stage=1, n_views=1, sdf=sdf)
    breakdown = evaluate(rig, pose, context)
    assert breakdown.penetration > 0 and breakdown.no_contact == 0
    _check_gradient(rig, pose, context)


def test_gradient_stage2_multiview(rng):
    local = np.random.default_rng(23)
    rig = make_random_rig(local, max_bones=6, max_vertices=40)
    pose = PoseState(
        articulation=local.normal(scale=0.3, size=(rig.num_bones, 3)),
        translation=local.normal(scale=0.5, size=3),
        rotation=np.zeros(3),
        scale=1.0,
    )
    context = _random_context(local, rig, pose, stage=2, n_views=4, target_scale=8.0)
    breakdown = evaluate(rig, pose, context)
    assert breakdown.n_valid_views == 4
    _check_gradient(rig, pose, context)


# ---------------------------------------------------------------------------
# view filtering semantics


def test_overthreshold_views_contribute_zero_gradient(rng):
    local = np.random.default_rng(31)
    rig = make_random_rig(local, max_bones=5, max_vertices=30)
    pose = PoseState.identity(rig.num_bones)
    context = _random_context(local, rig, pose, stage=2, n_views=4)

    # push one view's targets far away so its bc crosses epsilon_t
    bad = context.views[2]
    bad.correspondences.target += 5000.0
    breakdown, grad = evaluate_with_gradient(rig, pose, context)
    assert breakdown.per_view_bc[2] >= context.weights.epsilon_t
    assert breakdown.n_valid_views == 3

    trimmed = ObjectiveContext(
        views=[v for i, v in enumerate(context.views) if i != 2],
        weights=context.weights,
        levels=context.levels,
        sdf=None,
        stage=2,
    )
    _, grad_trimmed = evaluate_with_gradient(rig, pose, trimmed)
    assert np.allclose(_flat_grad(grad), _flat_grad(grad_trimmed), atol=1e-12)


def test_all_views_filtered_leaves_prior_only(rng):
    local = np.random.default_rng(37)
    rig = make_random_rig(local, max_bones=4, max_vertices=20)
    pose = PoseState(
        articulation=local.normal(scale=0.2, size=(rig.num_bones, 3)),
        translation=np.zeros(3),
        rotation=np.zeros(3),
        scale=1.0,
    )
    context = _random_context(local, rig, pose, stage=2, n_views=2)
    for v in context.views:
        v.correspondences.target += 5000.0
    breakdown, grad = evaluate_with_gradient(rig, pose, context)
    assert breakdown.n_valid_views == 0
    assert breakdown.mvbc == 0.0
    # only the articulation prior remains
    w = context.weights
    alpha_pow = np.power(w.alpha, context.levels.astype(float))
    expected = w.rp * (2.0 / rig.num_bones) * alpha_pow[:, None] * pose.articulation
    assert np.allclose(grad.articulation, expected, atol=1e-12)
    assert np.allclose(grad.translation, 0.0)


def test_exact_touch_produces_no_scene_gradient(rng):
    # synthetic linear field (value = y) with a node exactly at y=0, so a
    # touching vertex reads exactly zero
    from a3syn.geometry.sdf import SdfGrid

    ny = 9
    ys = -0.5 + 0.25 * np.arange(ny)
    values = np.broadcast_to(ys[None, :, None], (9, ny, 9)).astype(np.float32).copy()
    sdf = SdfGrid(origin=np.array([-1.0, -0.5, -1.0]), voxel_size=0.25, values=values)
    rig = _chain_rig([[0.0, 0.0, 0.0], [0.5, 0.7, 0.0]], owners=[0, 1], num_bones=2)
    pose = PoseState.identity(2)  # vertex 0 touches the zero level exactly
    corr = CorrespondenceSet(
        source=np.zeros((2, 2)),
        target=np.zeros((2, 2)),
        valid=np.zeros(2, dtype=bool),
        bone_vertices=[np.empty(0, np.int64), np.empty(0, np.int64)],
    )
    cam = Camera(position=(0, 1, -4), look_at=(0, 0.5, 0), width=16, height=16)
    context = ObjectiveContext(
        views=[ViewContext(camera=cam, correspondences=corr)],
        weights=LossWeights(),
        levels=np.array([0, 1]),
        sdf=sdf,
        stage=1,
    )
    breakdown, grad = evaluate_with_gradient(rig, pose, context)
    assert breakdown.penetration == 0.0
    assert breakdown.no_contact == 0.0
    # identical to the same context without any scene field
    context_free = ObjectiveContext(
        views=context.views, weights=context.weights,
        levels=context.levels, sdf=None, stage=1,
    )
    _, grad_free = evaluate_with_gradient(rig, pose, context_free)
    assert np.allclose(_flat_grad(grad), _flat_grad(grad_free), atol=1e-15)


def test_context_validation():
    with pytest.raises(ValueError):
        ObjectiveContext(views=[], weights=LossWeights(), levels=np.zeros(1), stage=1)
    cam = Camera(position=(0, 0, -2), look_at=(0, 0, 0), width=8, height=8)
    corr = CorrespondenceSet(
        source=np.zeros((1, 2)), target=np.zeros((1, 2)), valid=np.ones(1, bool),
        bone_vertices=[np.array([0])],
    )
    with pytest.raises(ValueError):
        ObjectiveContext(
            views=[ViewContext(cam, corr)], weights=LossWeights(),
            levels=np.zeros(1), stage=3,
        )
