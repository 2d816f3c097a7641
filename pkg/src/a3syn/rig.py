"""Skeleton, pose, and linear blend skinning.

World conventions: right-handed, Y up. Bone rotations are axis-angle
vectors applied in each bone's local frame after its rest transform.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RigError

WEIGHT_TOL = 1e-4
SMALL_ANGLE = 1e-6


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix of v, batched over leading dims."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3), dtype=np.float64)
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def axis_angle_to_matrix(v: np.ndarray) -> np.ndarray:
    """Rodrigues rotation for axis-angle vectors of shape (..., 3).

    Uses the series expansion of sin(t)/t and (1-cos(t))/t^2 below
    SMALL_ANGLE so the map stays smooth through zero.
    """
    v = np.asarray(v, dtype=np.float64)
    theta2 = np.einsum("...i,...i->...", v, v)
    theta = np.sqrt(theta2)
    small = theta < SMALL_ANGLE

    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(small, 1.0 - theta2 / 6.0, np.sin(theta) / theta)
        b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(theta)) / theta2)

    k = skew(v)
    kk = k @ k
    eye = np.broadcast_to(np.eye(3), k.shape)
    return eye + a[..., None, None] * k + b[..., None, None] * kk


def rotation_derivatives(v: np.ndarray, rot: np.ndarray | None = None) -> np.ndarray:
    """dR/dv_k for a single axis-angle vector, returned as (3, 3, 3).

    Closed form: dR/dv_i = (v_i [v]x + [v x ((I - R) e_i)]x) / |v|^2 R,
    degenerating to the generator [e_i]x at the origin.
    """
    v = np.asarray(v, dtype=np.float64)
    if rot is None:
        rot = axis_angle_to_matrix(v)
    theta2 = float(v @ v)
    basis = np.eye(3)
    if theta2 < SMALL_ANGLE**2:
        return np.stack([skew(basis[i]) for i in range(3)])
    imr = np.eye(3) - rot
    out = np.empty((3, 3, 3), dtype=np.float64)
    for i in range(3):
        cross = np.cross(v, imr @ basis[i])
        out[i] = ((v[i] * skew(v) + skew(cross)) / theta2) @ rot
    return out


def _affine(mat: np.ndarray, what: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape[-2:] != (4, 4):
        raise RigError(f"{what} must be 4x4 matrices, got {mat.shape}")
    bottom = mat[..., 3, :]
    if not np.allclose(bottom, [0.0, 0.0, 0.0, 1.0], atol=1e-6):
        raise RigError(f"{what} has a non-affine bottom row")
    return mat


@dataclass
class Skeleton:
    """Bone hierarchy in topological order (parent index < child index)."""

    parents: np.ndarray  # (B,) int, -1 for roots
    rest_local: np.ndarray  # (B, 4, 4) local rest transforms
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        if self.parents.ndim != 1 or self.parents.size == 0:
            raise RigError("skeleton needs at least one bone")
        self.rest_local = _affine(self.rest_local, "rest_local")
        if self.rest_local.shape[0] != self.num_bones:
            raise RigError("parents and rest_local disagree on bone count")
        idx = np.arange(self.num_bones)
        if np.any(self.parents >= idx) or np.any(self.parents < -1):
            raise RigError("invalid hierarchy: parents must precede children")
        if not self.names:
            self.names = [f"bone_{i}" for i in range(self.num_bones)]
        if len(self.names) != self.num_bones:
            raise RigError("name count does not match bone count")

    @property
    def num_bones(self) -> int:
        return int(self.parents.shape[0])


@dataclass
class HierarchyLevels:
    """Depth of each bone below its root (roots sit at level 0)."""

    levels: np.ndarray  # (B,) int

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.int64)
        if np.any(self.levels < 0):
            raise RigError("levels must be non-negative")


def hierarchy_levels(skeleton: Skeleton) -> HierarchyLevels:
    levels = np.zeros(skeleton.num_bones, dtype=np.int64)
    for i, p in enumerate(skeleton.parents):
        if p >= 0:
            levels[i] = levels[p] + 1
    return HierarchyLevels(levels)


@dataclass
class SkinnedRig:
    """Skeleton plus mesh, skin weights, and inverse bind matrices."""

    skeleton: Skeleton
    vertices: np.ndarray  # (V, 3) rest positions
    faces: np.ndarray  # (F, 3) int triangle indices, may be empty
    weights: np.ndarray  # (V, B), rows sum to 1
    inverse_bind: np.ndarray  # (B, 4, 4)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise RigError(f"vertices must be (V, 3), got {self.vertices.shape}")
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (
            self.faces.min() < 0 or self.faces.max() >= len(self.vertices)
        ):
            raise RigError("face indices out of range")
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.vertices), self.skeleton.num_bones):
            raise RigError(
                f"weights must be (V, B) = {(len(self.vertices), self.skeleton.num_bones)}"
            )
        if np.any(self.weights < -WEIGHT_TOL):
            raise RigError("non-normalized weights: negative entries")
        sums = self.weights.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > WEIGHT_TOL):
            raise RigError("non-normalized weights: rows must sum to 1")
        self.inverse_bind = _affine(self.inverse_bind, "inverse_bind")
        if self.inverse_bind.shape[0] != self.skeleton.num_bones:
            raise RigError("inverse_bind count does not match bone count")
        rest = rest_globals(self.skeleton)
        residual = np.abs(self.inverse_bind @ rest - np.eye(4)).max()
        if residual > 1e-4:
            raise RigError(
                f"inverse_bind does not invert the rest pose (residual {residual:.2e})"
            )

    @property
    def num_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def num_bones(self) -> int:
        return self.skeleton.num_bones

    def bounding_radius(self) -> float:
        center = self.vertices.mean(axis=0)
        return float(np.linalg.norm(self.vertices - center, axis=1).max())


@dataclass
class PoseState:
    """Per-bone articulation plus a global similarity transform."""

    articulation: np.ndarray  # (B, 3) axis-angle per bone
    translation: np.ndarray  # (3,)
    rotation: np.ndarray  # (3,) axis-angle
    scale: float = 1.0

    def __post_init__(self):
        self.articulation = np.asarray(self.articulation, dtype=np.float64)
        if self.articulation.ndim != 2 or self.articulation.shape[1] != 3:
            raise RigError("articulation must be (B, 3)")
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3)
        self.scale = float(self.scale)
        if not np.isfinite(self.scale) or self.scale <= 0.0:
            raise RigError("scale must be positive and finite")
        for arr in (self.articulation, self.translation, self.rotation):
            if not np.all(np.isfinite(arr)):
                raise RigError("pose contains non-finite values")

    @classmethod
    def identity(cls, num_bones: int, translation=(0.0, 0.0, 0.0)) -> "PoseState":
        return cls(
            articulation=np.zeros((num_bones, 3)),
            translation=np.asarray(translation, dtype=np.float64),
            rotation=np.zeros(3),
            scale=1.0,
        )

    def copy(self) -> "PoseState":
        return PoseState(
            articulation=self.articulation.copy(),
            translation=self.translation.copy(),
            rotation=self.rotation.copy(),
            scale=self.scale,
        )


def rot4(rot: np.ndarray) -> np.ndarray:
    """Embed (..., 3, 3) rotations into homogeneous (..., 4, 4)."""
    rot = np.asarray(rot, dtype=np.float64)
    out = np.zeros(rot.shape[:-2] + (4, 4), dtype=np.float64)
    out[..., :3, :3] = rot
    out[..., 3, 3] = 1.0
    return out


def forward_kinematics(skeleton: Skeleton, articulation: np.ndarray) -> np.ndarray:
    """Global bone transforms (B, 4, 4) for the given articulation.

    global[i] = global[parent(i)] @ rest_local[i] @ Rot(articulation[i]).
    """
    articulation = np.asarray(articulation, dtype=np.float64)
    if articulation.shape != (skeleton.num_bones, 3):
        raise RigError("articulation must be (B, 3)")
    local_rot = rot4(axis_angle_to_matrix(articulation))
    out = np.empty((skeleton.num_bones, 4, 4), dtype=np.float64)
    for i, p in enumerate(skeleton.parents):
        mat = skeleton.rest_local[i] @ local_rot[i]
        out[i] = mat if p < 0 else out[p] @ mat
    return out


def rest_globals(skeleton: Skeleton) -> np.ndarray:
    return forward_kinematics(skeleton, np.zeros((skeleton.num_bones, 3)))


def skin_matrices(rig: SkinnedRig, globals_: np.ndarray) -> np.ndarray:
    """Per-bone skinning matrices global[b] @ inverse_bind[b]."""
    return globals_ @ rig.inverse_bind


def blend_vertices(rig: SkinnedRig, globals_: np.ndarray) -> np.ndarray:
    """Skinned vertices in rig-local space, before the global transform."""
    smat = skin_matrices(rig, globals_)
    blended = np.einsum("vb,bij->vij", rig.weights, smat[:, :3, :])
    return np.einsum("vij,vj->vi", blended[:, :, :3], rig.vertices) + blended[:, :, 3]


def apply_global(pose: PoseState, points: np.ndarray) -> np.ndarray:
    """Similarity transform: scale, rotate, translate."""
    rot = axis_angle_to_matrix(pose.rotation)
    return pose.scale * (points @ rot.T) + pose.translation


def skin_vertices(rig: SkinnedRig, pose: PoseState) -> np.ndarray:
    """World-space vertices for the pose (LBS plus global similarity)."""
    globals_ = forward_kinematics(rig.skeleton, pose.articulation)
    return apply_global(pose, blend_vertices(rig, globals_))


def attribute_vertices_to_bones(weights: np.ndarray) -> np.ndarray:
    """Dominant bone per vertex; ties resolve to the lowest bone index."""
    weights = np.asarray(weights, dtype=np.float64)
    return np.argmax(weights, axis=1)
