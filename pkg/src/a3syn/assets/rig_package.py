"""Single-file packaged rigs (.npz) produced by ingestion."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import IngestError
from ..rig import Skeleton, SkinnedRig

FORMAT = "a3syn-rig-v1"


def save_rig_package(path, rig: SkinnedRig, metadata: dict | None = None) -> Path:
    path = Path(path)
    meta = dict(metadata or {})
    meta.setdefault("bone_names", list(rig.skeleton.names))
    meta["format"] = FORMAT
    np.savez(
        path,
        parents=rig.skeleton.parents,
        rest_local=rig.skeleton.rest_local,
        vertices=rig.vertices,
        faces=rig.faces,
        weights=rig.weights,
        inverse_bind=rig.inverse_bind,
        metadata=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8),
    )
    return path if path.suffix == ".npz" else path.with_suffix(path.suffix + ".npz")


def load_rig_package(path) -> tuple[SkinnedRig, dict]:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise IngestError(f"cannot read rig package: {exc}") from exc
    required = {
        "parents",
        "rest_local",
        "vertices",
        "faces",
        "weights",
        "inverse_bind",
        "metadata",
    }
    missing = required - set(data.files)
    if missing:
        raise IngestError(f"rig package is missing arrays: {sorted(missing)}")
    meta = json.loads(bytes(data["metadata"]).decode("utf-8"))
    if meta.get("format") != FORMAT:
        raise IngestError(f"unsupported rig package format {meta.get('format')!r}")
    skeleton = Skeleton(
        parents=data["parents"],
        rest_local=data["rest_local"],
        names=list(meta.get("bone_names", [])),
    )
    rig = SkinnedRig(
        skeleton=skeleton,
        vertices=data["vertices"],
        faces=data["faces"],
        weights=data["weights"],
        inverse_bind=data["inverse_bind"],
    )
    return rig, meta
