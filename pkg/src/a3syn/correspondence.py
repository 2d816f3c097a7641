"""Semantic correspondences between a rendered view and a target image.

Per-bone 2D anchors: foreground pixels of each bone's visible vertices
are matched into the target feature map by cosine similarity, weak and
outlier matches are dropped, and the surviving pairs are summarized by
source/target centroids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry.raster import RasterOutput


@dataclass
class FeatureMap:
    """Dense feature image (h, w, d), possibly coarser than the RGB image."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError("feature map must be (h, w, d)")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def upsample_features(features: FeatureMap, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear, corner-aligned resize to (out_h, out_w, d)."""
    data = features.data
    h, w, _ = data.shape
    if (h, w) == (out_h, out_w):
        return data.astype(np.float32)

    def src_coords(n_out, n_in):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out)
        return np.arange(n_out) * (n_in - 1) / (n_out - 1)

    ys = src_coords(out_h, h)
    xs = src_coords(out_w, w)
    y0 = np.minimum(np.floor(ys).astype(int), h - 2) if h > 1 else np.zeros(out_h, int)
    x0 = np.minimum(np.floor(xs).astype(int), w - 2) if w > 1 else np.zeros(out_w, int)
    fy = (ys - y0).astype(np.float32)
    fx = (xs - x0).astype(np.float32)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)

    top = (
        data[y0][:, x0] * (1 - fx)[None, :, None]
        + data[y0][:, x1] * fx[None, :, None]
    )
    bot = (
        data[y1][:, x0] * (1 - fx)[None, :, None]
        + data[y1][:, x1] * fx[None, :, None]
    )
    return top * (1 - fy)[:, None, None] + bot * fy[:, None, None]


def _normalize_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=-1, keepdims=True)
    return np.divide(mat, norms, out=np.zeros_like(mat), where=norms > 1e-12)


def match_semantic_batch(
    queries: np.ndarray, target: np.ndarray, chunk: int = 64
) -> tuple[np.ndarray, np.ndarray]:
    """Cosine argmax of each query in a (H, W, d) target map.

    Returns pixel coordinates (n, 2) as (u, v) and similarities (n,).
    Ties resolve to the first pixel in row-major order. Zero-norm
    queries and an all-zero target are degenerate.
    """
    h, w, d = target.shape
    flat = _normalize_rows(target.reshape(-1, d).astype(np.float64))
    if not flat.any():
        raise ValueError("degenerate feature: target map has no signal")
    qn = _normalize_rows(np.asarray(queries, dtype=np.float64).reshape(-1, d))
    if np.any(np.linalg.norm(qn, axis=1) <= 1e-12):
        raise ValueError("degenerate feature: zero-norm query")

    n = len(qn)
    best = np.zeros(n, dtype=np.int64)
    sims = np.full(n, -1.0)
    for s in range(0, n, chunk):
        q = qn[s : s + chunk]
        sim = q @ flat.T
        idx = np.argmax(sim, axis=1)
        best[s : s + chunk] = idx
        sims[s : s + chunk] = sim[np.arange(len(q)), idx]
    uv = np.stack([best % w, best // w], axis=1).astype(np.float64)
    return uv, sims


def match_semantic(query: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, float]:
    """Single-query cosine match; returns ((u, v), similarity)."""
    uv, sims = match_semantic_batch(np.asarray(query)[None, :], target)
    return uv[0], float(sims[0])


def sigma_filter(points: np.ndarray) -> np.ndarray:
    """Drop points strictly farther than one standard deviation from the
    mean, in a single pass. Returns a boolean keep mask.

    The deviation is the sample estimate (ddof=1) of the euclidean
    radius; with fewer than two points nothing is dropped.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    if n < 2:
        return np.ones(n, dtype=bool)
    dist = np.linalg.norm(points - points.mean(axis=0), axis=1)
    sigma = float(np.sqrt(np.sum(dist**2) / (n - 1)))
    keep = dist <= sigma
    if not keep.any():  # unreachable with ddof=1, kept as a guard
        return np.ones(n, dtype=bool)
    return keep


@dataclass
class CorrespondenceSet:
    """Per-bone 2D correspondence summary for one view.

    source/target hold centroids of the kept match pairs; bone_vertices
    holds the vertex indices behind each bone's kept pairs so a loss can
    re-project the source side under a changing pose.
    """

    source: np.ndarray  # (B, 2) pixel centroids in the rendered view
    target: np.ndarray  # (B, 2) pixel centroids in the target image
    valid: np.ndarray  # (B,) bool
    bone_vertices: list = field(default_factory=list)

    def __post_init__(self):
        self.source = np.asarray(self.source, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if not (len(self.source) == len(self.target) == len(self.valid)):
            raise ValueError("per-bone arrays disagree on bone count")

    @property
    def n_visible(self) -> int:
        return int(self.valid.sum())


def bone_correspondences(
    raster: RasterOutput,
    attribution: np.ndarray,
    query_features: np.ndarray,
    target_features: np.ndarray,
    tau: float = 0.5,
    num_bones: int | None = None,
) -> CorrespondenceSet:
    """Match each bone's visible vertices into the target image.

    query_features and target_features are dense (H, W, d) maps at image
    resolution. A bone is valid when at least one of its matches clears
    the similarity threshold tau and the outlier filter.
    """
    h, w, _ = target_features.shape
    if num_bones is None:
        num_bones = int(attribution.max()) + 1 if len(attribution) else 0

    vis_idx = np.nonzero(raster.visible)[0]
    source = np.zeros((num_bones, 2))
    target = np.zeros((num_bones, 2))
    valid = np.zeros(num_bones, dtype=bool)
    bone_vertices: list[np.ndarray] = [np.empty(0, dtype=np.int64)] * num_bones
    if vis_idx.size == 0:
        return CorrespondenceSet(source, target, valid, bone_vertices)

    px = np.round(raster.vertex_pixels[vis_idx]).astype(np.int64)
    px[:, 0] = np.clip(px[:, 0], 0, w - 1)
    px[:, 1] = np.clip(px[:, 1], 0, h - 1)
    queries = query_features[px[:, 1], px[:, 0]]
    matches, sims = match_semantic_batch(queries, target_features)
    strong = sims >= tau

    for b in range(num_bones):
        sel = strong & (attribution[vis_idx] == b)
        if not sel.any():
            continue
        pts_t = matches[sel]
        keep = sigma_filter(pts_t)
        verts = vis_idx[sel][keep]
        if verts.size == 0:
            continue
        source[b] = raster.vertex_pixels[verts].mean(axis=0)
        target[b] = pts_t[keep].mean(axis=0)
        valid[b] = True
        bone_vertices[b] = verts

    return CorrespondenceSet(source, target, valid, bone_vertices)
