import numpy as np
import pytest

import oracles
from a3syn.errors import RigError
from a3syn.rig import (
    PoseState,
    Skeleton,
    SkinnedRig,
    attribute_vertices_to_bones,
    axis_angle_to_matrix,
    blend_vertices,
    forward_kinematics,
    hierarchy_levels,
    rotation_derivatives,
    skin_vertices,
)
from conftest import make_random_rig


def test_axis_angle_matches_reference(rng):
    for _ in range(50):
        v = rng.normal(scale=1.5, size=3)
        got = axis_angle_to_matrix(v)
        want = oracles.rotation_from_axis_angle(v)
        assert np.allclose(got, want, atol=1e-12)


def test_axis_angle_batched(rng):
    vs = rng.normal(size=(7, 3))
    batched = axis_angle_to_matrix(vs)
    for i, v in enumerate(vs):
        assert np.allclose(batched[i], axis_angle_to_matrix(v))


def test_axis_angle_identity_at_zero():
    assert np.allclose(axis_angle_to_matrix(np.zeros(3)), np.eye(3))


@pytest.mark.parametrize("theta", [1e-10, 1e-8, 1e-7, 1e-6, 2e-6])
def test_axis_angle_small_angle_is_orthonormal(theta):
    v = theta * np.array([0.36, -0.48, 0.8])
    rot = axis_angle_to_matrix(v)
    assert np.allclose(rot @ rot.T, np.eye(3), atol=1e-14)
    assert np.isclose(np.linalg.det(rot), 1.0, atol=1e-14)
    # first-order term survives the series branch (slack for the theta^2 term)
    atol = max(theta**2, 1e-15)
    assert np.allclose(rot - np.eye(3), oracles.skew_reference(v), atol=atol)


def test_rotation_derivatives_match_finite_differences(rng):
    for _ in range(20):
        v = rng.normal(scale=1.2, size=3)
        if np.linalg.norm(v) < 1e-3:
            v = v + 0.5
        deriv = rotation_derivatives(v)
        h = 1e-6
        for i in range(3):
            dv = np.zeros(3)
            dv[i] = h
            fd = (axis_angle_to_matrix(v + dv) - axis_angle_to_matrix(v - dv)) / (2 * h)
            assert np.allclose(deriv[i], fd, atol=1e-7)


def test_rotation_derivatives_at_origin():
    deriv = rotation_derivatives(np.zeros(3))
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        assert np.allclose(deriv[i], oracles.skew_reference(e))


def test_forward_kinematics_matches_reference(rng):
    for _ in range(20):
        rig = make_random_rig(rng, max_bones=8, max_vertices=20)
        art = rng.normal(scale=0.7, size=(rig.num_bones, 3))
        got = forward_kinematics(rig.skeleton, art)
        want = oracles.forward_kinematics_reference(
            rig.skeleton.parents, rig.skeleton.rest_local, art
        )
        assert np.allclose(got, want, atol=1e-12)


def test_skinning_matches_reference(rng):
    for _ in range(10):
        rig = make_random_rig(rng, max_bones=6, max_vertices=60)
        pose = PoseState(
            articulation=rng.normal(scale=0.5, size=(rig.num_bones, 3)),
            translation=rng.normal(size=3),
            rotation=rng.normal(scale=0.4, size=3),
            scale=float(np.exp(rng.normal(scale=0.2))),
        )
        got = skin_vertices(rig, pose)
        want = oracles.skin_reference(
            rig.skeleton.parents,
            rig.skeleton.rest_local,
            rig.inverse_bind,
            rig.weights,
            rig.vertices,
            pose.articulation,
            scale=pose.scale,
            rotation=pose.rotation,
            translation=pose.translation,
        )
        assert np.allclose(got, want, atol=1e-10)


def test_rest_articulation_reproduces_rest_vertices(rng):
    rig = make_random_rig(rng, max_bones=7, max_vertices=40)
    pose = PoseState.identity(rig.num_bones)
    assert np.allclose(skin_vertices(rig, pose), rig.vertices, atol=1e-9)


def test_blend_ignores_global_similarity(rng):
    rig = make_random_rig(rng, max_bones=5, max_vertices=30)
    art = rng.normal(scale=0.4, size=(rig.num_bones, 3))
    globals_ = forward_kinematics(rig.skeleton, art)
    blended = blend_vertices(rig, globals_)
    posed = skin_vertices(
        rig,
        PoseState(
            articulation=art,
            translation=np.zeros(3),
            rotation=np.zeros(3),
            scale=1.0,
        ),
    )
    assert np.allclose(blended, posed, atol=1e-12)


def test_hierarchy_levels_chain_and_star():
    chain = Skeleton(
        parents=np.array([-1, 0, 1, 2]), rest_local=np.tile(np.eye(4), (4, 1, 1))
    )
    assert hierarchy_levels(chain).levels.tolist() == [0, 1, 2, 3]
    star = Skeleton(
        parents=np.array([-1, 0, 0, 0]), rest_local=np.tile(np.eye(4), (4, 1, 1))
    )
    assert hierarchy_levels(star).levels.tolist() == [0, 1, 1, 1]


def test_parent_after_child_rejected():
    with pytest.raises(RigError, match="invalid hierarchy"):
        Skeleton(parents=np.array([-1, 2, 0]), rest_local=np.tile(np.eye(4), (3, 1, 1)))


def test_non_normalized_weights_rejected(rng):
    rig = make_random_rig(rng, max_bones=4, max_vertices=10)
    bad = rig.weights.copy()
    bad[0] *= 0.5
    with pytest.raises(RigError, match="non-normalized weights"):
        SkinnedRig(
            skeleton=rig.skeleton,
            vertices=rig.vertices,
            faces=rig.faces,
            weights=bad,
            inverse_bind=rig.inverse_bind,
        )


def test_weight_tolerance_is_accepted(rng):
    rig = make_random_rig(rng, max_bones=4, max_vertices=10)
    nudged = rig.weights.copy()
    nudged[0, np.argmax(nudged[0])] += 5e-5  # inside the 1e-4 budget
    SkinnedRig(
        skeleton=rig.skeleton,
        vertices=rig.vertices,
        faces=rig.faces,
        weights=nudged,
        inverse_bind=rig.inverse_bind,
    )


def test_inconsistent_inverse_bind_rejected(rng):
    rig = make_random_rig(rng, max_bones=4, max_vertices=10)
    bad = rig.inverse_bind.copy()
    bad[0, :3, 3] += 0.1
    with pytest.raises(RigError, match="inverse_bind"):
        SkinnedRig(
            skeleton=rig.skeleton,
            vertices=rig.vertices,
            faces=rig.faces,
            weights=rig.weights,
            inverse_bind=bad,
        )


def test_pose_validation():
    with pytest.raises(RigError):
        PoseState(
            articulation=np.zeros((2, 3)),
            translation=np.zeros(3),
            rotation=np.zeros(3),
            scale=-1.0,
        )
    with pytest.raises(RigError):
        PoseState(
            articulation=np.full((2, 3), np.nan),
            translation=np.zeros(3),
            rotation=np.zeros(3),
            scale=1.0,
        )


def test_pose_copy_is_independent():
    pose = PoseState.identity(3)
    other = pose.copy()
    other.articulation[0, 0] = 1.0
    other.translation[1] = 2.0
    assert pose.articulation[0, 0] == 0.0
    assert pose.translation[1] == 0.0


def test_attribution_tie_breaks_to_lowest_index():
    weights = np.array([[0.5, 0.5, 0.0], [0.2, 0.4, 0.4], [0.0, 0.0, 1.0]])
    assert attribute_vertices_to_bones(weights).tolist() == [0, 1, 2]
