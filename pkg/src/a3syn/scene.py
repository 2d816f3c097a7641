"""Static scene geometry bundled with its distance field."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry.sdf import SdfGrid, build_or_load_sdf


@dataclass
class SceneContext:
    vertices: np.ndarray  # (V, 3)
    faces: np.ndarray  # (F, 3)
    sdf: SdfGrid
    anchor: np.ndarray  # (3,) placement point in world space

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        self.anchor = np.asarray(self.anchor, dtype=np.float64).reshape(3)

    @property
    def occluders(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices, self.faces

    @classmethod
    def from_mesh(
        cls,
        vertices: np.ndarray,
        faces: np.ndarray,
        anchor,
        sdf_resolution: int = 128,
        sdf_padding: float = 0.05,
        cache_dir=None,
    ) -> "SceneContext":
        sdf = build_or_load_sdf(
            vertices, faces, sdf_resolution, sdf_padding, cache_dir
        )
        return cls(vertices=vertices, faces=faces, sdf=sdf, anchor=anchor)
