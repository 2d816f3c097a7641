"""Voxel signed distance fields over triangle soups.

Values live on grid nodes. Unsigned distance starts from an occupancy
grid of dense surface samples whose nearest occupied node is found by
Euclidean feature transform, then gets sharpened by an exact
point-triangle distance against that node's triangle. Sign comes from
ray-crossing parity shot along all three axes with majority vote, so
meshes are assumed closed.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

MAGIC = b"A3SDF1"

# transverse lattice jitter keeps parity rays off edges and vertices
_JITTER = (1.23456789e-5, 2.3456789e-5)
_AXIS_JITTER = 0.37e-5


@dataclass
class SdfGrid:
    origin: np.ndarray  # (3,) world position of node (0, 0, 0)
    voxel_size: float
    values: np.ndarray  # (nx, ny, nz) float32, negative inside

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.voxel_size = float(self.voxel_size)
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise ValueError("SDF grid needs at least 2 nodes per axis")
        if self.voxel_size <= 0:
            raise ValueError("voxel_size must be positive")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def upper(self) -> np.ndarray:
        return self.origin + (np.array(self.dims) - 1) * self.voxel_size


def closest_point_on_triangles(
    points: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray
) -> np.ndarray:
    """Closest point on triangle i to points[i], all arrays (N, 3)."""
    ab = b - a
    ac = c - a
    ap = points - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = points - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = points - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    out = np.empty_like(points)
    done = np.zeros(len(points), dtype=bool)

    def take(mask, value):
        nonlocal done
        mask = mask & ~done
        out[mask] = value[mask] if value.shape == out.shape else value
        done = done | mask

    take((d1 <= 0) & (d2 <= 0), a)
    take((d3 >= 0) & (d4 <= d3), b)
    take((d6 >= 0) & (d5 <= d6), c)

    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        take((vc <= 0) & (d1 >= 0) & (d3 <= 0), a + t_ab[:, None] * ab)
        t_ac = d2 / (d2 - d6)
        take((vb <= 0) & (d2 >= 0) & (d6 <= 0), a + t_ac[:, None] * ac)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        take(
            (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
            b + t_bc[:, None] * (c - b),
        )
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        interior = a + v[:, None] * ab + w[:, None] * ac
    # degenerate triangles fall back to the nearest vertex
    interior = np.where(np.isfinite(interior), interior, a)
    take(~done, interior)
    return out


def _surface_samples(
    vertices: np.ndarray, faces: np.ndarray, spacing: float, max_level: int = 256
) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric lattice samples with in-triangle spacing <= spacing."""
    tris = vertices[faces]
    edges = np.stack(
        [
            np.linalg.norm(tris[:, 1] - tris[:, 0], axis=1),
            np.linalg.norm(tris[:, 2] - tris[:, 1], axis=1),
            np.linalg.norm(tris[:, 0] - tris[:, 2], axis=1),
        ]
    ).max(axis=0)
    levels = np.clip(np.ceil(edges / spacing).astype(int), 1, max_level)

    pts, ids = [], []
    for m in np.unique(levels):
        sel = np.nonzero(levels == m)[0]
        ii, jj = np.meshgrid(np.arange(m + 1), np.arange(m + 1), indexing="ij")
        keep = (ii + jj) <= m
        u = (ii[keep] / m).reshape(1, -1, 1)
        v = (jj[keep] / m).reshape(1, -1, 1)
        t = tris[sel]
        p = (
            t[:, None, 0]
            + u * (t[:, None, 1] - t[:, None, 0])
            + v * (t[:, None, 2] - t[:, None, 0])
        )
        pts.append(p.reshape(-1, 3))
        ids.append(np.repeat(sel, int(keep.sum())))
    return np.concatenate(pts), np.concatenate(ids)


def _candidate_triangles(
    samples: np.ndarray,
    sample_tri: np.ndarray,
    origin: np.ndarray,
    voxel: float,
    dims: tuple[int, int, int],
) -> np.ndarray:
    """Per grid node, a triangle id near its closest surface point.

    Surface samples snap to their nearest node; each occupied node keeps
    the sample closest to it. The feature transform then hands every
    node the id of its nearest occupied node, whose triangle becomes the
    refinement candidate.
    """
    dims = np.asarray(dims)
    idx = np.clip(np.rint((samples - origin) / voxel).astype(np.int64), 0, dims - 1)
    flat = (idx[:, 0] * dims[1] + idx[:, 1]) * dims[2] + idx[:, 2]
    offset = samples - (origin + idx * voxel)
    d2 = np.einsum("ij,ij->i", offset, offset)
    order = np.lexsort((d2, flat))
    flat = flat[order]
    lead = np.ones(len(flat), dtype=bool)
    lead[1:] = flat[1:] != flat[:-1]
    rep_flat = flat[lead]
    rep_tri = sample_tri[order][lead]

    occupied = np.zeros(tuple(dims), dtype=bool)
    occupied.reshape(-1)[rep_flat] = True
    feature = ndimage.distance_transform_edt(
        ~occupied, return_distances=False, return_indices=True
    )
    feature_flat = (
        feature[0].astype(np.int64) * dims[1] + feature[1]
    ) * dims[2] + feature[2]
    return rep_tri[np.searchsorted(rep_flat, feature_flat.reshape(-1))]


def _parity_axis(
    axis: int,
    vertices: np.ndarray,
    faces: np.ndarray,
    origin: np.ndarray,
    voxel: float,
    dims: tuple[int, int, int],
) -> np.ndarray:
    """Inside flags from ray parity along one axis, shape dims, bool."""
    u_ax, v_ax = [d for d in range(3) if d != axis]
    nu, nv = dims[u_ax], dims[v_ax]
    n_along = dims[axis]

    tris = vertices[faces]
    normals = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])

    du = _JITTER[0] * voxel
    dv = _JITTER[1] * voxel

    cols, crossings = [], []
    for t in range(len(tris)):
        n = normals[t]
        if abs(n[axis]) < 1e-14:
            continue
        tri = tris[t]
        tu, tv = tri[:, u_ax], tri[:, v_ax]

        lo_u = int(np.ceil((tu.min() - origin[u_ax] - du) / voxel))
        hi_u = int(np.floor((tu.max() - origin[u_ax] - du) / voxel))
        lo_v = int(np.ceil((tv.min() - origin[v_ax] - dv) / voxel))
        hi_v = int(np.floor((tv.max() - origin[v_ax] - dv) / voxel))
        lo_u, hi_u = max(lo_u, 0), min(hi_u, nu - 1)
        lo_v, hi_v = max(lo_v, 0), min(hi_v, nv - 1)
        if hi_u < lo_u or hi_v < lo_v:
            continue

        gu = origin[u_ax] + du + voxel * np.arange(lo_u, hi_u + 1)
        gv = origin[v_ax] + dv + voxel * np.arange(lo_v, hi_v + 1)
        pu, pv = np.meshgrid(gu, gv, indexing="ij")

        e = []
        for k in range(3):
            u0, v0 = tu[k], tv[k]
            u1, v1 = tu[(k + 1) % 3], tv[(k + 1) % 3]
            e.append((u1 - u0) * (pv - v0) - (v1 - v0) * (pu - u0))
        inside2d = ((e[0] >= 0) & (e[1] >= 0) & (e[2] >= 0)) | (
            (e[0] <= 0) & (e[1] <= 0) & (e[2] <= 0)
        )
        if not inside2d.any():
            continue

        # ray-plane intersection coordinate along the axis
        rel_u = pu[inside2d] - tri[0, u_ax]
        rel_v = pv[inside2d] - tri[0, v_ax]
        x_star = tri[0, axis] - (n[u_ax] * rel_u + n[v_ax] * rel_v) / n[axis]

        iu, iv = np.nonzero(inside2d)
        cols.append((iu + lo_u) * nv + (iv + lo_v))
        crossings.append(x_star)

    inside = np.zeros((nu, nv, n_along), dtype=bool)
    if cols:
        col = np.concatenate(cols)
        xs = np.concatenate(crossings)
        order = np.lexsort((xs, col))
        col, xs = col[order], xs[order]
        starts = np.searchsorted(col, np.unique(col))
        bounds = np.append(starts, len(col))
        axis_coords = (
            origin[axis] + voxel * np.arange(n_along) + _AXIS_JITTER * voxel
        )
        uniq = col[starts]
        for s, e_, c in zip(bounds[:-1], bounds[1:], uniq):
            seg = xs[s:e_]
            above = seg.size - np.searchsorted(seg, axis_coords, side="right")
            inside[c // nv, c % nv] = (above % 2) == 1

    # move the ray axis back to its true position
    return np.moveaxis(inside, 2, axis) if axis != 2 else inside


def build_sdf_grid(
    vertices: np.ndarray,
    faces: np.ndarray,
    resolution: int = 128,
    padding: float = 0.05,
) -> SdfGrid:
    """Sample a signed distance grid around the mesh.

    resolution counts nodes along the longest padded axis; padding is a
    fraction of the bounding-box diagonal added on every side.
    """
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    if len(faces) == 0:
        raise ValueError("mesh has no triangles")

    lo = vertices.min(axis=0)
    hi = vertices.max(axis=0)
    diag = float(np.linalg.norm(hi - lo))
    pad = padding * max(diag, 1e-9)
    origin = lo - pad
    span = (hi - lo) + 2 * pad
    voxel = float(span.max()) / (resolution - 1)
    dims = tuple(np.maximum(2, np.ceil(span / voxel - 1e-9).astype(int) + 1))

    axes = [np.arange(n) * voxel + origin[i] for i, n in enumerate(dims)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([gx, gy, gz], axis=-1).reshape(-1, 3)

    samples, sample_tri = _surface_samples(vertices, faces, voxel)
    tri_idx = _candidate_triangles(samples, sample_tri, origin, voxel, dims)
    tris = vertices[faces[tri_idx]]
    closest = closest_point_on_triangles(nodes, tris[:, 0], tris[:, 1], tris[:, 2])
    dist = np.linalg.norm(nodes - closest, axis=1)

    votes = np.zeros(dims, dtype=np.int8)
    for axis in range(3):
        votes += _parity_axis(axis, vertices, faces, origin, voxel, dims)
    inside = votes >= 2

    values = dist.reshape(dims)
    values[inside] *= -1.0
    return SdfGrid(origin=origin, voxel_size=voxel, values=values.astype(np.float32))


def _trilinear_setup(grid: SdfGrid, points: np.ndarray):
    points = np.asarray(points, dtype=np.float64)
    dims = np.array(grid.dims)
    t = (points - grid.origin) / grid.voxel_size
    t_cl = np.clip(t, 0.0, dims - 1)
    out_vec = (t - t_cl) * grid.voxel_size
    out_d = np.linalg.norm(out_vec, axis=1)
    cell = np.minimum(np.floor(t_cl).astype(np.int64), dims - 2)
    frac = t_cl - cell
    return t, t_cl, out_vec, out_d, cell, frac


def _corners(grid: SdfGrid, cell: np.ndarray):
    ix, iy, iz = cell[:, 0], cell[:, 1], cell[:, 2]
    v = grid.values
    return {
        (i, j, k): v[ix + i, iy + j, iz + k].astype(np.float64)
        for i in (0, 1)
        for j in (0, 1)
        for k in (0, 1)
    }


def query_sdf(grid: SdfGrid, points: np.ndarray) -> np.ndarray:
    """Trilinear SDF values; outside the grid box the box distance is added."""
    _, _, _, out_d, cell, frac = _trilinear_setup(grid, points)
    c = _corners(grid, cell)
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    val = np.zeros(len(points))
    for (i, j, k), cv in c.items():
        wx = fx if i else 1.0 - fx
        wy = fy if j else 1.0 - fy
        wz = fz if k else 1.0 - fz
        val += cv * wx * wy * wz
    return val + out_d


def query_sdf_gradient(grid: SdfGrid, points: np.ndarray) -> np.ndarray:
    """Gradient of query_sdf, (N, 3). Piecewise smooth across cells."""
    t, _, out_vec, out_d, cell, frac = _trilinear_setup(grid, points)
    c = _corners(grid, cell)
    fx, fy, fz = frac[:, 0], frac[:, 1], frac[:, 2]
    grad = np.zeros((len(points), 3))
    for (i, j, k), cv in c.items():
        wx = fx if i else 1.0 - fx
        wy = fy if j else 1.0 - fy
        wz = fz if k else 1.0 - fz
        sx = 1.0 if i else -1.0
        sy = 1.0 if j else -1.0
        sz = 1.0 if k else -1.0
        grad[:, 0] += cv * sx * wy * wz
        grad[:, 1] += cv * wx * sy * wz
        grad[:, 2] += cv * wx * wy * sz
    grad /= grid.voxel_size

    # clamped coordinates contribute nothing through the interpolant
    dims = np.array(grid.dims)
    active = (t >= 0.0) & (t <= dims - 1)
    grad *= active

    far = out_d > 0
    grad[far] += out_vec[far] / out_d[far, None]
    return grad


def sdf_cache_key(
    vertices: np.ndarray, faces: np.ndarray, resolution: int, padding: float
) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(vertices, dtype=np.float64).tobytes())
    h.update(np.ascontiguousarray(faces, dtype=np.int64).tobytes())
    h.update(struct.pack("<id", resolution, padding))
    return h.hexdigest()


def save_sdf_grid(path, grid: SdfGrid) -> None:
    dims = grid.dims
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<3I", *dims))
        fh.write(struct.pack("<3d", *grid.origin))
        fh.write(struct.pack("<d", grid.voxel_size))
        fh.write(np.asfortranarray(grid.values, dtype="<f4").tobytes(order="F"))


def load_sdf_grid(path) -> SdfGrid:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError("not an SDF cache file")
    off = len(MAGIC)
    dims = struct.unpack_from("<3I", raw, off)
    off += 12
    origin = struct.unpack_from("<3d", raw, off)
    off += 24
    (voxel,) = struct.unpack_from("<d", raw, off)
    off += 8
    count = dims[0] * dims[1] * dims[2]
    values = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
    if values.size != count:
        raise ValueError("truncated SDF cache file")
    return SdfGrid(
        origin=np.array(origin),
        voxel_size=voxel,
        values=values.reshape(dims, order="F").copy(),
    )


def build_or_load_sdf(
    vertices: np.ndarray,
    faces: np.ndarray,
    resolution: int = 128,
    padding: float = 0.05,
    cache_dir=None,
) -> SdfGrid:
    """Build the grid, reusing a content-addressed cache file if present."""
    if cache_dir is None:
        return build_sdf_grid(vertices, faces, resolution, padding)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = sdf_cache_key(np.asarray(vertices), np.asarray(faces), resolution, padding)
    path = cache_dir / f"{key}.sdf"
    if path.exists():
        return load_sdf_grid(path)
    grid = build_sdf_grid(vertices, faces, resolution, padding)
    save_sdf_grid(path, grid)
    return grid
