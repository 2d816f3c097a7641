from pathlib import Path

from ..errors import IngestError
from .gltf import dedup_vertices, load_rig, load_scene_gltf
from .obj import load_scene_obj
from .pose_io import load_pose, pose_from_dict, pose_to_dict, save_pose
from .rig_package import load_rig_package, save_rig_package
from .verify import verify_rig


def load_rig_any(path):
    """Rig from .gltf/.glb or a packaged .npz; returns (rig, metadata)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".npz":
        return load_rig_package(path)
    if suffix in (".gltf", ".glb"):
        return load_rig(path)
    raise IngestError(f"unsupported rig format {suffix!r}")


def load_scene_mesh(path, dedup: bool = True):
    """Triangle soup from .obj/.gltf/.glb; returns (vertices, faces)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return load_scene_obj(path, dedup=dedup)
    if suffix in (".gltf", ".glb"):
        return load_scene_gltf(path, dedup=dedup)
    raise IngestError(f"unsupported scene format {suffix!r}")


__all__ = [
    "load_rig",
    "load_rig_any",
    "load_scene_gltf",
    "load_scene_obj",
    "load_scene_mesh",
    "dedup_vertices",
    "load_pose",
    "save_pose",
    "pose_to_dict",
    "pose_from_dict",
    "save_rig_package",
    "load_rig_package",
    "verify_rig",
]
