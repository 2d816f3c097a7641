"""Software z-buffer rasterizer and view scoring.

Depth is interpolated as 1/z, which is affine in screen space, so the
buffer holds exact perspective-correct camera depths. Object and
occluder geometry keep separate buffers; the silhouette marks pixels
where the object is the nearest surface.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import NotVisibleError
from .camera import Camera

NEAR_PLANE = 1e-4

OBJECT_TINT = np.array([0.80, 0.62, 0.42])
OCCLUDER_TINT = np.array([0.55, 0.56, 0.58])
BACKGROUND = np.array([0.93, 0.93, 0.93])


@dataclass
class RasterOutput:
    color: np.ndarray  # (H, W, 3) uint8
    object_depth: np.ndarray  # (H, W) float64, inf where empty
    occluder_depth: np.ndarray  # (H, W) float64, inf where empty
    silhouette: np.ndarray  # (H, W) bool, object is nearest surface
    visible: np.ndarray  # (V,) bool
    vertex_pixels: np.ndarray  # (V, 2) float64, nan behind the camera
    vertex_depths: np.ndarray  # (V,)
    depth_epsilon: float

    @property
    def silhouette_fraction(self) -> float:
        return float(self.silhouette.mean())


def _clip_near(tri: np.ndarray, near: float) -> list[np.ndarray]:
    """Sutherland-Hodgman clip of one camera-space triangle against z=near."""
    inside = tri[:, 2] > near
    if inside.all():
        return [tri]
    if not inside.any():
        return []
    poly = []
    for i in range(3):
        a, b = tri[i], tri[(i + 1) % 3]
        ain, bin_ = inside[i], inside[(i + 1) % 3]
        if ain:
            poly.append(a)
        if ain != bin_:
            t = (near - a[2]) / (b[2] - a[2])
            poly.append(a + t * (b - a))
    out = []
    for k in range(1, len(poly) - 1):
        out.append(np.stack([poly[0], poly[k], poly[k + 1]]))
    return out


def _raster_mesh(camera: Camera, vertices: np.ndarray, faces: np.ndarray, shade: bool):
    """Depth and intensity buffers for one mesh. No face culling."""
    h, w = camera.height, camera.width
    depth = np.full((h, w), np.inf)
    intensity = np.zeros((h, w)) if shade else None
    if len(faces) == 0 or len(vertices) == 0:
        return depth, intensity

    cam = camera.to_camera(vertices)
    f = camera.focal
    cx, cy = camera.principal
    tris_cam = cam[faces]

    clipped = []
    needs_clip = (tris_cam[:, :, 2] <= NEAR_PLANE).any(axis=1)
    clipped.extend(tris_cam[~needs_clip])
    for tri in tris_cam[needs_clip]:
        clipped.extend(_clip_near(tri, NEAR_PLANE))

    for tri in clipped:
        z = tri[:, 2]
        u = f * tri[:, 0] / z + cx
        v = f * tri[:, 1] / z + cy

        x0 = max(int(np.floor(u.min())), 0)
        x1 = min(int(np.ceil(u.max())), w - 1)
        y0 = max(int(np.floor(v.min())), 0)
        y1 = min(int(np.ceil(v.max())), h - 1)
        if x1 < x0 or y1 < y0:
            continue

        denom = (u[1] - u[0]) * (v[2] - v[0]) - (v[1] - v[0]) * (u[2] - u[0])
        if abs(denom) < 1e-12:
            continue

        xs = np.arange(x0, x1 + 1)
        ys = np.arange(y0, y1 + 1)
        px, py = np.meshgrid(xs, ys)

        w0 = (u[2] - u[1]) * (py - v[1]) - (v[2] - v[1]) * (px - u[1])
        w1 = (u[0] - u[2]) * (py - v[2]) - (v[0] - v[2]) * (px - u[2])
        w2 = (u[1] - u[0]) * (py - v[0]) - (v[1] - v[0]) * (px - u[0])
        w0, w1, w2 = w0 / denom, w1 / denom, w2 / denom
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            continue

        invz = w0 / z[0] + w1 / z[1] + w2 / z[2]
        with np.errstate(divide="ignore"):
            zpix = 1.0 / invz
        sub = depth[y0 : y1 + 1, x0 : x1 + 1]
        upd = inside & (zpix < sub)
        sub[upd] = zpix[upd]
        if shade:
            n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
            nn = np.linalg.norm(n)
            if nn > 1e-12:
                view = tri.mean(axis=0)
                view = view / np.linalg.norm(view)
                lambert = abs(float(n @ view)) / nn
            else:
                lambert = 0.0
            isub = intensity[y0 : y1 + 1, x0 : x1 + 1]
            isub[upd] = 0.3 + 0.7 * lambert
    return depth, intensity


def rasterize(
    vertices: np.ndarray,
    faces: np.ndarray,
    camera: Camera,
    occluders: tuple[np.ndarray, np.ndarray] | None = None,
    *,
    depth_epsilon: float | None = None,
    shade: bool = True,
) -> RasterOutput:
    """Render the object (plus optional occluder mesh) from one camera.

    A vertex counts as visible when its pixel is in bounds, lies on the
    silhouette, and its depth is within depth_epsilon of the object
    depth buffer there. Every visible vertex therefore sits inside the
    silhouette by construction.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    h, w = camera.height, camera.width

    if depth_epsilon is None:
        pts = vertices
        if occluders is not None and len(occluders[0]):
            pts = np.vstack([vertices, np.asarray(occluders[0], dtype=np.float64)])
        diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))) if len(pts) else 1.0
        depth_epsilon = 1e-3 * max(diag, 1e-9)

    obj_depth, obj_int = _raster_mesh(camera, vertices, faces, shade)
    if occluders is not None:
        occ_v = np.asarray(occluders[0], dtype=np.float64)
        occ_f = np.asarray(occluders[1], dtype=np.int64).reshape(-1, 3)
        occ_depth, occ_int = _raster_mesh(camera, occ_v, occ_f, shade)
    else:
        occ_depth, occ_int = np.full((h, w), np.inf), None

    silhouette = np.isfinite(obj_depth) & (obj_depth <= occ_depth)

    uv, z = camera.project(vertices)
    px = np.round(uv).astype(np.float64)
    in_front = z > NEAR_PLANE
    xi = np.where(in_front, px[:, 0], -1).astype(np.int64)
    yi = np.where(in_front, px[:, 1], -1).astype(np.int64)
    in_bounds = in_front & (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    visible = np.zeros(len(vertices), dtype=bool)
    idx = np.nonzero(in_bounds)[0]
    if idx.size:
        on_sil = silhouette[yi[idx], xi[idx]]
        near_depth = z[idx] <= obj_depth[yi[idx], xi[idx]] + depth_epsilon
        visible[idx] = on_sil & near_depth

    color = np.empty((h, w, 3), dtype=np.uint8)
    if shade:
        img = np.tile(BACKGROUND, (h, w, 1))
        occ_mask = np.isfinite(occ_depth) & ~silhouette
        if occ_int is not None:
            img[occ_mask] = occ_int[occ_mask, None] * OCCLUDER_TINT
        img[silhouette] = obj_int[silhouette, None] * OBJECT_TINT
        color = (np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    else:
        color.fill(0)

    return RasterOutput(
        color=color,
        object_depth=obj_depth,
        occluder_depth=occ_depth,
        silhouette=silhouette,
        visible=visible,
        vertex_pixels=uv,
        vertex_depths=z,
        depth_epsilon=depth_epsilon,
    )


def dilate_mask(mask: np.ndarray, radius_px: int) -> np.ndarray:
    """Grow a boolean mask by an exact euclidean disk of radius_px."""
    mask = np.asarray(mask, dtype=bool)
    if radius_px <= 0 or not mask.any():
        return mask.copy()
    dist = ndimage.distance_transform_edt(~mask)
    return dist <= radius_px


def occlusion_rate(with_occluders: np.ndarray, without_occluders: np.ndarray) -> float:
    """1 - visible area ratio; 1.0 when the object covers no pixels at all."""
    area_wo = float(np.count_nonzero(without_occluders))
    if area_wo == 0:
        return 1.0
    area_w = float(np.count_nonzero(with_occluders))
    return 1.0 - min(area_w / area_wo, 1.0)


def select_best_view(
    cameras: list[Camera],
    vertices: np.ndarray,
    faces: np.ndarray,
    occluders: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[int, np.ndarray]:
    """Pick the camera maximizing silhouette area times (1 - occlusion).

    Raises NotVisibleError when every candidate scores zero.
    """
    scores = np.zeros(len(cameras))
    for i, cam in enumerate(cameras):
        plain = rasterize(vertices, faces, cam, None, shade=False)
        frac = plain.silhouette_fraction
        if frac == 0.0:
            continue
        if occluders is None:
            scores[i] = frac
            continue
        both = rasterize(vertices, faces, cam, occluders, shade=False)
        rate = occlusion_rate(both.silhouette, plain.silhouette)
        scores[i] = frac * (1.0 - rate)
    if not len(cameras) or scores.max() <= 0.0:
        raise NotVisibleError("object not visible from any candidate camera")
    return int(np.argmax(scores)), scores
