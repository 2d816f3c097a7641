"""Minimal OBJ reader for static scene geometry."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import IngestError
from .gltf import dedup_vertices


def load_scene_obj(path, dedup: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Vertices and triangles; polygons beyond 3 vertices are fan split."""
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        tag = parts[0]
        if tag == "v":
            if len(parts) < 4:
                raise IngestError(f"line {lineno}: vertex needs 3 coordinates")
            verts.append([float(x) for x in parts[1:4]])
        elif tag == "f":
            idx = []
            for token in parts[1:]:
                raw = token.split("/")[0]
                if not raw:
                    raise IngestError(f"line {lineno}: empty face index")
                i = int(raw)
                # negative indices count back from the current vertex list
                idx.append(len(verts) + i if i < 0 else i - 1)
            if len(idx) < 3:
                raise IngestError(f"line {lineno}: face needs 3+ vertices")
            for k in range(1, len(idx) - 1):
                faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts or not faces:
        raise IngestError("obj file has no usable geometry")
    v = np.asarray(verts, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    if f.min() < 0 or f.max() >= len(v):
        raise IngestError("face index out of range")
    if dedup:
        v, f = dedup_vertices(v, f)
    return v, f
