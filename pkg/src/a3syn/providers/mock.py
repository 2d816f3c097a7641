"""In-process oracle provider built around a hidden target pose.

Inpainting renders the rig at the hidden pose and composites it into
the masked region, so the downstream matching machinery can be tested
end to end without a diffusion model. Every vertex carries a nearly
orthogonal unit feature code; feature maps paint the code of the
nearest vertex per pixel, which makes cosine matching exact.
"""

from __future__ import annotations

import hashlib

import numpy as np

from ..correspondence import FeatureMap
from ..errors import ProviderError
from ..geometry.camera import Camera
from ..geometry.raster import rasterize
from ..rig import PoseState, SkinnedRig, skin_vertices
from .base import Provider, VerifyResult

_VALID_REPLY = '```json\n{"is_valid": true}\n```'
_INVALID_REPLY = '```json\n{"is_valid": false}\n```'


def _image_key(image: np.ndarray) -> bytes:
    h = hashlib.sha256()
    h.update(str(image.shape).encode())
    h.update(np.ascontiguousarray(image).tobytes())
    return h.digest()


def _vertex_codes(
    num_vertices: int, tau: float, seed: int, start_dim: int = 128
) -> np.ndarray:
    """Random unit codes with pairwise |cos| below 0.9 tau."""
    rng = np.random.default_rng(seed)
    dim = start_dim
    limit = 0.9 * tau
    while True:
        codes = rng.standard_normal((num_vertices, dim))
        codes /= np.linalg.norm(codes, axis=1, keepdims=True)
        gram = np.abs(codes @ codes.T)
        np.fill_diagonal(gram, 0.0)
        if gram.max() < limit or dim >= 4096:
            return codes.astype(np.float32)
        dim *= 2


class MockOracleProvider(Provider):
    """Oracle backend for closed-loop tests.

    The pipeline announces geometry through observe_view before asking
    for renders' features; inpainted images are remembered by content
    hash together with the hidden geometry that produced them.
    """

    def __init__(
        self,
        rig: SkinnedRig,
        hidden_pose: PoseState,
        occluders: tuple[np.ndarray, np.ndarray] | None = None,
        tau: float = 0.5,
        seed: int = 0,
    ):
        self.rig = rig
        self.hidden_pose = hidden_pose
        self.occluders = occluders
        self.codes = _vertex_codes(rig.num_vertices, tau, seed)
        self._hidden_world = skin_vertices(rig, hidden_pose)
        self._bound_cameras: list[Camera] = []
        self._bound_vertices: np.ndarray | None = None
        self._memory: dict[bytes, tuple[Camera, np.ndarray, np.ndarray]] = {}
        self._verify_queue: list[bool] = []
        self.inpaint_calls = 0

    @property
    def feature_dim(self) -> int:
        return self.codes.shape[1]

    def capabilities(self) -> dict:
        return {
            "name": "mock-oracle",
            "feature_dim": self.feature_dim,
            "tiled_inpaint": True,
        }

    def observe_view(self, cameras, posed_vertices: np.ndarray) -> None:
        if isinstance(cameras, Camera):
            cameras = [cameras]
        self._bound_cameras = list(cameras)
        self._bound_vertices = np.asarray(posed_vertices, dtype=np.float64).copy()

    def queue_verify(self, replies) -> None:
        self._verify_queue.extend(bool(r) for r in replies)

    def verify(self, image, prompt) -> VerifyResult:
        if self._verify_queue:
            ok = self._verify_queue.pop(0)
        else:
            ok = True
        return VerifyResult(ok, _VALID_REPLY if ok else _INVALID_REPLY)

    def _hidden_view(
        self, camera: Camera, mask: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Hidden-pose composite pixels and paintable-vertex flags."""
        out = rasterize(
            self._hidden_world, self.rig.faces, camera, self.occluders
        )
        uv, z = camera.project(self._hidden_world)
        px = np.round(uv).astype(np.int64)
        flags = out.visible.copy()
        idx = np.nonzero(flags)[0]
        if idx.size:
            in_mask = mask[px[idx, 1], px[idx, 0]]
            flags[idx] = in_mask
        return out.color, flags

    def inpaint(self, image, mask, prompt, gamma, seed) -> np.ndarray:
        self.inpaint_calls += 1
        image = np.asarray(image)
        mask = np.asarray(mask, dtype=bool)
        if gamma == 0.0:
            return image.copy()
        h, w = image.shape[:2]

        if len(self._bound_cameras) == 1:
            cam = self._bound_cameras[0]
            if (cam.height, cam.width) != (h, w):
                raise ProviderError("bound camera does not match image size")
            hidden, flags = self._hidden_view(cam, mask)
            out = np.where(mask[:, :, None], hidden, image)
            self._memory[_image_key(out)] = (cam, self._hidden_world, flags)
            return out

        if len(self._bound_cameras) == 4:
            vh, vw = h // 2, w // 2
            out = image.copy()
            offsets = [(0, 0), (0, vw), (vh, 0), (vh, vw)]
            for cam, (oy, ox) in zip(self._bound_cameras, offsets):
                if (cam.height, cam.width) != (vh, vw):
                    raise ProviderError("tiled cameras do not match image size")
                sub_mask = mask[oy : oy + vh, ox : ox + vw]
                hidden, flags = self._hidden_view(cam, sub_mask)
                quad = np.where(
                    sub_mask[:, :, None], hidden, image[oy : oy + vh, ox : ox + vw]
                )
                out[oy : oy + vh, ox : ox + vw] = quad
                self._memory[_image_key(quad)] = (cam, self._hidden_world, flags)
            return out

        raise ProviderError("mock inpaint needs 1 or 4 observed cameras")

    def _paint(
        self, camera: Camera, world: np.ndarray, flags: np.ndarray | None
    ) -> FeatureMap:
        h, w = camera.height, camera.width
        data = np.zeros((h, w, self.feature_dim), dtype=np.float32)
        uv, z = camera.project(world)
        keep = (z > 1e-6) & np.isfinite(uv).all(axis=1)
        if flags is not None:
            keep &= flags
        px = np.full((len(world), 2), -1, dtype=np.int64)
        px[keep] = np.round(uv[keep]).astype(np.int64)
        keep &= (
            (px[:, 0] >= 0) & (px[:, 0] < w) & (px[:, 1] >= 0) & (px[:, 1] < h)
        )
        idx = np.nonzero(keep)[0]
        if idx.size == 0:
            return FeatureMap(data)
        pix = px[idx, 1] * w + px[idx, 0]
        order = np.lexsort((z[idx], pix))
        firsts = np.ones(len(order), dtype=bool)
        firsts[1:] = pix[order][1:] != pix[order][:-1]
        chosen = idx[order[firsts]]
        flat = data.reshape(-1, self.feature_dim)
        flat[pix[order[firsts]]] = self.codes[chosen]
        return FeatureMap(data)

    def extract_features(self, image) -> FeatureMap:
        image = np.asarray(image)
        key = _image_key(image)
        if key in self._memory:
            cam, world, flags = self._memory[key]
            return self._paint(cam, world, flags)
        if len(self._bound_cameras) == 1 and self._bound_vertices is not None:
            cam = self._bound_cameras[0]
            if (cam.height, cam.width) == image.shape[:2]:
                return self._paint(cam, self._bound_vertices, None)
        raise ProviderError("mock has no geometry bound for this image")
