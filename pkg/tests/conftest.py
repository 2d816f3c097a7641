"""Shared fixtures: procedural rigs, scenes, and the acceptance report."""

from __future__ import annotations

import math

import numpy as np
import pytest

from a3syn.rig import PoseState, Skeleton, SkinnedRig, skin_vertices
from a3syn.scene import SceneContext

# ---------------------------------------------------------------------------
# acceptance criterion reporting


_ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_acceptance(name: str, passed: bool, detail: str = "") -> None:
    _ACCEPTANCE.append((name, bool(passed), detail))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        status = "PASS" if ok else "FAIL"
        line = f"{status}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


# ---------------------------------------------------------------------------
# mesh building blocks


def tube(p0, p1, radius=0.07, n_ring=8, n_seg=4):
    """Open tube along a segment; returns (verts, faces)."""
    p0 = np.asarray(p0, dtype=np.float64)
    p1 = np.asarray(p1, dtype=np.float64)
    axis = p1 - p0
    length = np.linalg.norm(axis)
    axis = axis / length
    ref = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    u = np.cross(axis, ref)
    u /= np.linalg.norm(u)
    w = np.cross(axis, u)
    verts = []
    for i in range(n_seg + 1):
        c = p0 + axis * (length * i / n_seg)
        for j in range(n_ring):
            a = 2 * math.pi * j / n_ring
            verts.append(c + radius * (math.cos(a) * u + math.sin(a) * w))
    faces = []
    for i in range(n_seg):
        for j in range(n_ring):
            a = i * n_ring + j
            b = i * n_ring + (j + 1) % n_ring
            c = (i + 1) * n_ring + j
            d = (i + 1) * n_ring + (j + 1) % n_ring
            faces.append([a, b, c])
            faces.append([b, d, c])
    return np.array(verts), np.array(faces, dtype=np.int64)


def ellipsoid(center, radii, n_lat=6, n_lon=10):
    center = np.asarray(center, dtype=np.float64)
    radii = np.asarray(radii, dtype=np.float64)
    verts = [center + radii * np.array([0.0, 1.0, 0.0])]
    for i in range(1, n_lat):
        phi = math.pi * i / n_lat
        for j in range(n_lon):
            th = 2 * math.pi * j / n_lon
            verts.append(
                center
                + radii
                * np.array(
                    [
                        math.sin(phi) * math.cos(th),
                        math.cos(phi),
                        math.sin(phi) * math.sin(th),
                    ]
                )
            )
    verts.append(center + radii * np.array([0.0, -1.0, 0.0]))
    top, bottom = 0, len(verts) - 1
    faces = []
    for j in range(n_lon):
        faces.append([top, 1 + (j + 1) % n_lon, 1 + j])
    for i in range(n_lat - 2):
        row0 = 1 + i * n_lon
        row1 = row0 + n_lon
        for j in range(n_lon):
            a, b = row0 + j, row0 + (j + 1) % n_lon
            c, d = row1 + j, row1 + (j + 1) % n_lon
            faces.append([a, b, c])
            faces.append([b, d, c])
    row = 1 + (n_lat - 2) * n_lon
    for j in range(n_lon):
        faces.append([bottom, row + j, row + (j + 1) % n_lon])
    return np.array(verts), np.array(faces, dtype=np.int64)


def icosphere(subdivisions=3, radius=1.0):
    t = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = list(verts)
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                m /= np.linalg.norm(m)
                cache[key] = len(verts)
                verts.append(m)
            return cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return radius * np.array(verts), np.array(faces, dtype=np.int64)


def slab_mesh(half_extent=4.0, top=0.0, thickness=1.0):
    """Closed box whose top face is the ground plane."""
    x, z = half_extent, half_extent
    y0, y1 = top - thickness, top
    verts = np.array(
        [
            [-x, y0, -z], [x, y0, -z], [x, y0, z], [-x, y0, z],
            [-x, y1, -z], [x, y1, -z], [x, y1, z], [-x, y1, z],
        ]
    )
    faces = np.array(
        [
            [4, 6, 5], [4, 7, 6],  # top
            [0, 1, 2], [0, 2, 3],  # bottom
            [0, 4, 5], [0, 5, 1],
            [1, 5, 6], [1, 6, 2],
            [2, 6, 7], [2, 7, 3],
            [3, 7, 4], [3, 4, 0],
        ],
        dtype=np.int64,
    )
    return verts, faces


# ---------------------------------------------------------------------------
# rigs


def _segment_distance(points, a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    ab = b - a
    denom = float(ab @ ab)
    t = np.clip((points - a) @ ab / max(denom, 1e-12), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(points - closest, axis=1)


def build_quadruped() -> SkinnedRig:
    """Ten-bone standing quadruped, feet resting at y=0."""
    shoulder_y, knee_y = 1.0, 0.5
    hips = [(0.45, 0.28), (0.45, -0.28), (-0.45, 0.28), (-0.45, -0.28)]

    names = ["body"]
    parents = [-1]
    rest_local = [np.eye(4)]
    rest_local[0][:3, 3] = (0.0, shoulder_y, 0.0)
    segments = {0: (np.array([-0.55, shoulder_y, 0.0]), np.array([0.55, shoulder_y, 0.0]))}

    parts = [ellipsoid((0.0, shoulder_y, 0.0), (0.72, 0.3, 0.36))]
    for li, (hx, hz) in enumerate(hips):
        upper = np.eye(4)
        upper[:3, 3] = (hx, 0.0, hz)
        parents.append(0)
        rest_local.append(upper)
        names.append(f"upper_leg_{li}")
        u_idx = len(parents) - 1
        segments[u_idx] = (
            np.array([hx, shoulder_y, hz]),
            np.array([hx, knee_y, hz]),
        )
        lower = np.eye(4)
        lower[:3, 3] = (0.0, knee_y - shoulder_y, 0.0)
        parents.append(u_idx)
        rest_local.append(lower)
        names.append(f"lower_leg_{li}")
        segments[len(parents) - 1] = (
            np.array([hx, knee_y, hz]),
            np.array([hx, 0.0, hz]),
        )
        parts.append(tube((hx, shoulder_y, hz), (hx, knee_y, hz), 0.085))
        parts.append(tube((hx, knee_y, hz), (hx, 0.0, hz), 0.07))

    neck = np.eye(4)
    neck[:3, 3] = (0.62, 0.12, 0.0)
    parents.append(0)
    rest_local.append(neck)
    names.append("neck")
    segments[len(parents) - 1] = (
        np.array([0.62, shoulder_y + 0.12, 0.0]),
        np.array([0.95, shoulder_y + 0.38, 0.0]),
    )
    parts.append(tube((0.62, shoulder_y + 0.12, 0.0), (0.95, shoulder_y + 0.38, 0.0), 0.1))

    verts = np.vstack([p[0] for p in parts])
    offset = 0
    faces = []
    for v, f in parts:
        faces.append(f + offset)
        offset += len(v)
    faces = np.vstack(faces)

    num_bones = len(parents)
    dists = np.stack(
        [_segment_distance(verts, *segments[b]) for b in range(num_bones)], axis=1
    )
    # two nearest bones share each vertex, gaussian falloff
    weights = np.zeros_like(dists)
    nearest = np.argsort(dists, axis=1)[:, :2]
    rows = np.arange(len(verts))
    for k in range(2):
        b = nearest[:, k]
        weights[rows, b] = np.exp(-((dists[rows, b] / 0.16) ** 2))
    weights[weights.sum(axis=1) < 1e-12, 0] = 1.0
    weights /= weights.sum(axis=1, keepdims=True)

    skeleton = Skeleton(
        parents=np.array(parents), rest_local=np.stack(rest_local), names=names
    )
    rest_globals = np.zeros((num_bones, 4, 4))
    for i, p in enumerate(parents):
        rest_globals[i] = (
            skeleton.rest_local[i] if p < 0 else rest_globals[p] @ skeleton.rest_local[i]
        )
    inverse_bind = np.linalg.inv(rest_globals)
    return SkinnedRig(
        skeleton=skeleton,
        vertices=verts,
        faces=faces,
        weights=weights,
        inverse_bind=inverse_bind,
    )


def make_random_rig(rng: np.random.Generator, max_bones=10, max_vertices=500):
    """Random tree skeleton with affine rest transforms and sparse weights."""
    num_bones = int(rng.integers(1, max_bones + 1))
    num_verts = int(rng.integers(4, max_vertices + 1))
    parents = [-1]
    for i in range(1, num_bones):
        parents.append(int(rng.integers(0, i)))

    rest_local = np.zeros((num_bones, 4, 4))
    for i in range(num_bones):
        mat = np.eye(4)
        axis_angle = rng.normal(scale=0.6, size=3)
        theta = np.linalg.norm(axis_angle)
        if theta > 1e-9:
            k = axis_angle / theta
            kk = np.array(
                [[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]]
            )
            mat[:3, :3] = (
                np.eye(3) + math.sin(theta) * kk + (1 - math.cos(theta)) * kk @ kk
            )
        mat[:3, 3] = rng.normal(scale=0.8, size=3)
        rest_local[i] = mat

    skeleton = Skeleton(parents=np.array(parents), rest_local=rest_local)
    rest_globals = np.zeros((num_bones, 4, 4))
    for i, p in enumerate(parents):
        rest_globals[i] = (
            rest_local[i] if p < 0 else rest_globals[p] @ rest_local[i]
        )
    inverse_bind = np.linalg.inv(rest_globals)

    vertices = rng.normal(scale=1.2, size=(num_verts, 3))
    raw = rng.random((num_verts, num_bones)) ** 3
    keep = rng.integers(0, num_bones, size=num_verts)
    raw[np.arange(num_verts), keep] += 0.5  # every row keeps some mass
    raw[raw < 0.2] = 0.0
    raw[np.arange(num_verts), keep] = np.maximum(
        raw[np.arange(num_verts), keep], 0.3
    )
    weights = raw / raw.sum(axis=1, keepdims=True)

    return SkinnedRig(
        skeleton=skeleton,
        vertices=vertices,
        faces=np.empty((0, 3), dtype=np.int64),
        weights=weights,
        inverse_bind=inverse_bind,
    )


def grounded_pose(rig: SkinnedRig, pose: PoseState, ground_y=0.0) -> PoseState:
    """Shift the pose vertically until its lowest vertex sits on ground_y."""
    world = skin_vertices(rig, pose)
    out = pose.copy()
    out.translation = out.translation + np.array(
        [0.0, ground_y - world[:, 1].min(), 0.0]
    )
    return out


# ---------------------------------------------------------------------------
# fixtures


@pytest.fixture(scope="session")
def quadruped() -> SkinnedRig:
    return build_quadruped()


@pytest.fixture(scope="session")
def slab_scene() -> SceneContext:
    verts, faces = slab_mesh(half_extent=4.0)
    return SceneContext.from_mesh(
        verts, faces, anchor=(0.0, 0.0, 0.0), sdf_resolution=96
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
