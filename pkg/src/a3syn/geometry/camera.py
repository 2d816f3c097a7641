"""Pinhole camera with an image-space y-down convention.

Camera space: x right, y down, z forward. Pixel centers sit on integer
coordinates and the principal point is the image center, so a point on
the optical axis lands exactly on the middle pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    width: int
    height: int
    fov_deg: float = 50.0  # vertical field of view
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.look_at = np.asarray(self.look_at, dtype=np.float64).reshape(3)
        self.up = np.asarray(self.up, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        forward = self.look_at - self.position
        norm = np.linalg.norm(forward)
        if norm < 1e-12:
            raise ValueError("camera position and look_at coincide")
        f = forward / norm
        r = np.cross(f, self.up)
        rnorm = np.linalg.norm(r)
        if rnorm < 1e-12:
            raise ValueError("camera forward is parallel to up")
        r = r / rnorm
        d = np.cross(f, r)  # image y, points down in world
        self._rot = np.stack([r, d, f])  # world-to-camera rotation rows

    @property
    def focal(self) -> float:
        return (self.height / 2.0) / math.tan(math.radians(self.fov_deg) / 2.0)

    @property
    def principal(self) -> tuple[float, float]:
        return ((self.width - 1) / 2.0, (self.height - 1) / 2.0)

    @property
    def world_to_camera(self) -> np.ndarray:
        return self._rot

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return (points - self.position) @ self._rot.T

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (N, 2) and camera-space depths (N,).

        Points at or behind the camera plane get non-finite pixels;
        callers gate on depth before using them.
        """
        cam = self.to_camera(points)
        z = cam[:, 2]
        cx, cy = self.principal
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.focal * cam[:, 0] / z + cx
            v = self.focal * cam[:, 1] / z + cy
        uv = np.stack([u, v], axis=1)
        uv[z <= 0] = np.nan
        return uv, z

    def projection_jacobian(self, points: np.ndarray) -> np.ndarray:
        """d(pixel)/d(world point) as (N, 2, 3)."""
        cam = self.to_camera(points)
        x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
        f = self.focal
        jac_cam = np.zeros((len(cam), 2, 3), dtype=np.float64)
        jac_cam[:, 0, 0] = f / z
        jac_cam[:, 0, 2] = -f * x / z**2
        jac_cam[:, 1, 1] = f / z
        jac_cam[:, 1, 2] = -f * y / z**2
        return jac_cam @ self._rot

    def describe(self) -> dict:
        return {
            "position": self.position.tolist(),
            "look_at": self.look_at.tolist(),
            "width": self.width,
            "height": self.height,
            "fov_deg": self.fov_deg,
        }


def sample_camera_ring(
    center: np.ndarray,
    distance: float,
    elevations_deg,
    per_level: int,
    width: int,
    height: int,
    fov_deg: float = 50.0,
) -> list[Camera]:
    """Cameras on rings around center: per_level azimuths per elevation."""
    center = np.asarray(center, dtype=np.float64).reshape(3)
    if distance <= 0:
        raise ValueError("camera distance must be positive")
    cams = []
    for elev in elevations_deg:
        el = math.radians(float(elev))
        for j in range(per_level):
            az = 2.0 * math.pi * j / per_level
            direction = np.array(
                [
                    math.cos(el) * math.cos(az),
                    math.sin(el),
                    math.cos(el) * math.sin(az),
                ]
            )
            cams.append(
                Camera(
                    position=center + distance * direction,
                    look_at=center,
                    width=width,
                    height=height,
                    fov_deg=fov_deg,
                )
            )
    return cams
