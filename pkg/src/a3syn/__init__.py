"""Affordance-aware articulation synthesis for rigged 3D assets."""

__version__ = "0.1.0"

from .errors import (
    A3SynError,
    IngestError,
    NotVisibleError,
    NoValidViewError,
    ProviderError,
    RigError,
    TransportError,
)
from .rig import (
    HierarchyLevels,
    PoseState,
    Skeleton,
    SkinnedRig,
    attribute_vertices_to_bones,
    axis_angle_to_matrix,
    forward_kinematics,
    hierarchy_levels,
    skin_vertices,
)

__all__ = [
    "__version__",
    "A3SynError",
    "RigError",
    "IngestError",
    "NotVisibleError",
    "NoValidViewError",
    "ProviderError",
    "TransportError",
    "Skeleton",
    "SkinnedRig",
    "PoseState",
    "HierarchyLevels",
    "axis_angle_to_matrix",
    "forward_kinematics",
    "skin_vertices",
    "attribute_vertices_to_bones",
    "hierarchy_levels",
]
