"""Pose serialization: schema a3syn-pose-v1."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import IngestError
from ..rig import PoseState

SCHEMA = "a3syn-pose-v1"


def pose_to_dict(
    pose: PoseState,
    bone_names: list[str],
    original_joint_indices: list[int] | None = None,
) -> dict:
    if len(bone_names) != len(pose.articulation):
        raise ValueError("bone name count does not match articulation")
    doc = {
        "schema": SCHEMA,
        "bones": [
            {"name": name, "axis_angle": [float(x) for x in row]}
            for name, row in zip(bone_names, pose.articulation)
        ],
        "global": {
            "translation": [float(x) for x in pose.translation],
            "rotation": [float(x) for x in pose.rotation],
            "scale": float(pose.scale),
        },
    }
    if original_joint_indices is not None:
        doc["original_joint_indices"] = [int(i) for i in original_joint_indices]
    return doc


def save_pose(
    path,
    pose: PoseState,
    bone_names: list[str],
    original_joint_indices: list[int] | None = None,
) -> Path:
    path = Path(path)
    doc = pose_to_dict(pose, bone_names, original_joint_indices)
    path.write_text(json.dumps(doc, indent=2) + "\n")
    return path


def pose_from_dict(doc: dict) -> tuple[PoseState, list[str]]:
    if doc.get("schema") != SCHEMA:
        raise IngestError(f"unsupported pose schema {doc.get('schema')!r}")
    bones = doc.get("bones")
    if not isinstance(bones, list) or not bones:
        raise IngestError("pose document lists no bones")
    names, rows = [], []
    for entry in bones:
        try:
            names.append(str(entry["name"]))
            rows.append([float(x) for x in entry["axis_angle"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestError(f"malformed bone entry: {exc}") from exc
    g = doc.get("global", {})
    try:
        pose = PoseState(
            articulation=np.asarray(rows, dtype=np.float64),
            translation=np.asarray(g["translation"], dtype=np.float64),
            rotation=np.asarray(g["rotation"], dtype=np.float64),
            scale=float(g["scale"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise IngestError(f"malformed global transform: {exc}") from exc
    return pose, names


def load_pose(path) -> tuple[PoseState, list[str]]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise IngestError(f"pose file is not valid JSON: {exc}") from exc
    return pose_from_dict(doc)
