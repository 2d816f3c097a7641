"""glTF 2.0 ingestion for skinned rigs and static scene meshes.

Supports .gltf JSON and .glb containers, embedded data URIs, external
buffer files, and the accessor component types used by common
exporters. Joints are reindexed topologically; non-joint nodes sitting
between joints are composed into the child joint's rest transform.
"""

from __future__ import annotations

import base64
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import IngestError
from ..rig import Skeleton, SkinnedRig

_COMPONENT_DTYPES = {
    5120: np.dtype("<i1"),
    5121: np.dtype("<u1"),
    5122: np.dtype("<i2"),
    5123: np.dtype("<u2"),
    5125: np.dtype("<u4"),
    5126: np.dtype("<f4"),
}
_TYPE_COUNTS = {
    "SCALAR": 1,
    "VEC2": 2,
    "VEC3": 3,
    "VEC4": 4,
    "MAT4": 16,
}
_NORMALIZE_DIVISOR = {5121: 255.0, 5123: 65535.0}

_GLB_MAGIC = 0x46546C67
_CHUNK_JSON = 0x4E4F534A
_CHUNK_BIN = 0x004E4942


def _read_glb(raw: bytes) -> tuple[dict, bytes | None]:
    if len(raw) < 12:
        raise IngestError("truncated glb header")
    magic, version, _ = struct.unpack_from("<3I", raw, 0)
    if magic != _GLB_MAGIC:
        raise IngestError("not a glb container")
    if version != 2:
        raise IngestError(f"unsupported glb version {version}")
    off = 12
    doc, blob = None, None
    while off + 8 <= len(raw):
        length, ctype = struct.unpack_from("<2I", raw, off)
        off += 8
        chunk = raw[off : off + length]
        off += length
        if ctype == _CHUNK_JSON:
            doc = json.loads(chunk.decode("utf-8"))
        elif ctype == _CHUNK_BIN:
            blob = chunk
    if doc is None:
        raise IngestError("glb has no JSON chunk")
    return doc, blob


class _GltfFile:
    def __init__(self, path):
        path = Path(path)
        raw = path.read_bytes()
        if raw[:4] == b"glTF":
            self.doc, self._bin = _read_glb(raw)
        else:
            try:
                self.doc = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise IngestError(f"cannot parse {path.name}: {exc}") from exc
            self._bin = None
        self._dir = path.parent
        self._buffers: dict[int, bytes] = {}

    def buffer(self, index: int) -> bytes:
        if index in self._buffers:
            return self._buffers[index]
        try:
            spec = self.doc["buffers"][index]
        except (KeyError, IndexError) as exc:
            raise IngestError(f"buffer {index} missing") from exc
        uri = spec.get("uri")
        if uri is None:
            if self._bin is None:
                raise IngestError("buffer refers to glb chunk but none present")
            data = self._bin
        elif uri.startswith("data:"):
            try:
                data = base64.b64decode(uri.split(",", 1)[1])
            except (IndexError, ValueError) as exc:
                raise IngestError("malformed data uri") from exc
        else:
            ext = self._dir / uri
            if not ext.exists():
                raise IngestError(f"external buffer {uri} not found")
            data = ext.read_bytes()
        if len(data) < spec.get("byteLength", 0):
            raise IngestError(f"buffer {index} shorter than declared")
        self._buffers[index] = data
        return data

    def accessor(self, index: int) -> np.ndarray:
        try:
            acc = self.doc["accessors"][index]
        except (KeyError, IndexError) as exc:
            raise IngestError(f"accessor {index} missing") from exc
        ctype = acc["componentType"]
        if ctype not in _COMPONENT_DTYPES:
            raise IngestError(f"unsupported componentType {ctype}")
        if acc["type"] not in _TYPE_COUNTS:
            raise IngestError(f"unsupported accessor type {acc['type']}")
        dtype = _COMPONENT_DTYPES[ctype]
        ncomp = _TYPE_COUNTS[acc["type"]]
        count = acc["count"]
        if "bufferView" not in acc:
            return np.zeros((count, ncomp), dtype=dtype)
        view = self.doc["bufferViews"][acc["bufferView"]]
        data = self.buffer(view["buffer"])
        start = view.get("byteOffset", 0) + acc.get("byteOffset", 0)
        elem = dtype.itemsize * ncomp
        stride = view.get("byteStride") or elem
        need = start + stride * (count - 1) + elem
        if need > len(data):
            raise IngestError(f"accessor {index} overruns its buffer")
        if stride == elem:
            out = np.frombuffer(data, dtype=dtype, count=count * ncomp, offset=start)
            return out.reshape(count, ncomp).copy()
        rows = np.empty((count, ncomp), dtype=dtype)
        for i in range(count):
            off = start + i * stride
            rows[i] = np.frombuffer(data, dtype=dtype, count=ncomp, offset=off)
        return rows


def _quat_to_matrix(q) -> np.ndarray:
    x, y, z, w = (float(v) for v in q)
    n = x * x + y * y + z * z + w * w
    if n < 1e-12:
        return np.eye(3)
    s = 2.0 / n
    return np.array(
        [
            [1 - s * (y * y + z * z), s * (x * y - z * w), s * (x * z + y * w)],
            [s * (x * y + z * w), 1 - s * (x * x + z * z), s * (y * z - x * w)],
            [s * (x * z - y * w), s * (y * z + x * w), 1 - s * (x * x + y * y)],
        ]
    )


def _node_local(node: dict) -> np.ndarray:
    if "matrix" in node:
        return np.array(node["matrix"], dtype=np.float64).reshape(4, 4).T
    mat = np.eye(4)
    rot = _quat_to_matrix(node.get("rotation", (0, 0, 0, 1)))
    scale = np.array(node.get("scale", (1, 1, 1)), dtype=np.float64)
    mat[:3, :3] = rot * scale[None, :]
    mat[:3, 3] = node.get("translation", (0, 0, 0))
    return mat


def _node_parents(doc: dict) -> list[int]:
    nodes = doc.get("nodes", [])
    parents = [-1] * len(nodes)
    for i, node in enumerate(nodes):
        for child in node.get("children", []):
            if child >= len(nodes):
                raise IngestError("invalid hierarchy: child index out of range")
            if parents[child] != -1:
                raise IngestError("invalid hierarchy: node has two parents")
            if child == i:
                raise IngestError("invalid hierarchy: node is its own child")
            parents[child] = i
    # cycle check: every node must reach a root
    for i in range(len(nodes)):
        seen = set()
        cur = i
        while cur != -1:
            if cur in seen:
                raise IngestError("invalid hierarchy: cycle among nodes")
            seen.add(cur)
            cur = parents[cur]
    return parents


def _topological_joints(
    doc: dict, joints: list[int], node_parents: list[int]
) -> tuple[list[int], list[int], list[np.ndarray], list[str]]:
    """Order joints parent-first and compose intermediate node transforms.

    Returns (order, bone_parents, rest_local, names) where order[i] is
    the position of bone i in the original skin joint list.
    """
    joint_set = set(joints)
    if len(joint_set) != len(joints):
        raise IngestError("invalid hierarchy: duplicate joints in skin")
    nodes = doc["nodes"]
    locals_ = [_node_local(n) for n in nodes]

    depth = {}

    def node_depth(n: int) -> int:
        if n in depth:
            return depth[n]
        p = node_parents[n]
        depth[n] = 0 if p == -1 else node_depth(p) + 1
        return depth[n]

    order = sorted(range(len(joints)), key=lambda j: (node_depth(joints[j]), j))
    new_index = {joints[j]: k for k, j in enumerate(order)}

    bone_parents, rest_local, names = [], [], []
    for j in order:
        node_idx = joints[j]
        chain = [locals_[node_idx]]
        cur = node_parents[node_idx]
        while cur != -1 and cur not in joint_set:
            chain.append(locals_[cur])
            cur = node_parents[cur]
        mat = np.eye(4)
        for link in reversed(chain):
            mat = mat @ link
        rest_local.append(mat)
        bone_parents.append(-1 if cur == -1 else new_index[cur])
        names.append(nodes[node_idx].get("name", f"bone_{len(names)}"))
    return order, bone_parents, rest_local, names


def load_rig(path) -> tuple[SkinnedRig, dict]:
    """Parse the first skinned mesh of a glTF/glb file.

    Returns (rig, metadata); metadata carries original_joint_indices
    mapping each bone back to its position in the file's skin joint
    list, for round-tripping poses.
    """
    gf = _GltfFile(path)
    doc = gf.doc

    skins = doc.get("skins", [])
    if not skins:
        raise IngestError("no rig found: file has no skins")
    skin = skins[0]
    joints = skin.get("joints", [])
    if not joints:
        raise IngestError("no rig found: skin lists no joints")

    mesh_index = None
    for node in doc.get("nodes", []):
        if node.get("skin") == 0 and "mesh" in node:
            mesh_index = node["mesh"]
            break
    if mesh_index is None:
        raise IngestError("no rig found: no node binds the skin to a mesh")

    node_parents = _node_parents(doc)
    order, bone_parents, rest_local, names = _topological_joints(
        doc, joints, node_parents
    )
    num_bones = len(joints)

    # remap: original skin joint position -> topological bone index
    remap = np.empty(num_bones, dtype=np.int64)
    for new, old in enumerate(order):
        remap[old] = new

    if "inverseBindMatrices" in skin:
        ibm_raw = gf.accessor(skin["inverseBindMatrices"]).astype(np.float64)
        if len(ibm_raw) != num_bones:
            raise IngestError("inverseBindMatrices count does not match joints")
        ibm_orig = ibm_raw.reshape(-1, 4, 4).transpose(0, 2, 1)
    else:
        ibm_orig = np.tile(np.eye(4), (num_bones, 1, 1))
    inverse_bind = np.empty_like(ibm_orig)
    for old in range(num_bones):
        inverse_bind[remap[old]] = ibm_orig[old]

    mesh = doc["meshes"][mesh_index]
    all_pos, all_faces, all_weights = [], [], []
    offset = 0
    for prim in mesh.get("primitives", []):
        if prim.get("mode", 4) != 4:
            continue
        attrs = prim.get("attributes", {})
        if "POSITION" not in attrs:
            raise IngestError("mesh primitive has no POSITION")
        if "JOINTS_0" not in attrs or "WEIGHTS_0" not in attrs:
            raise IngestError("no rig found: primitive lacks skinning attributes")
        pos = gf.accessor(attrs["POSITION"]).astype(np.float64)
        jidx = gf.accessor(attrs["JOINTS_0"]).astype(np.int64)
        wacc = doc["accessors"][attrs["WEIGHTS_0"]]
        wraw = gf.accessor(attrs["WEIGHTS_0"]).astype(np.float64)
        if wacc["componentType"] != 5126:
            div = _NORMALIZE_DIVISOR.get(wacc["componentType"])
            if div is None:
                raise IngestError("unsupported WEIGHTS_0 component type")
            wraw = wraw / div
        if jidx.max(initial=0) >= num_bones:
            raise IngestError("JOINTS_0 refers to a joint outside the skin")

        dense = np.zeros((len(pos), num_bones))
        for k in range(jidx.shape[1]):
            np.add.at(dense, (np.arange(len(pos)), remap[jidx[:, k]]), wraw[:, k])

        if "indices" in prim:
            faces = gf.accessor(prim["indices"]).reshape(-1)
        else:
            faces = np.arange(len(pos))
        if len(faces) % 3 != 0:
            raise IngestError("triangle index count not divisible by 3")
        all_pos.append(pos)
        all_faces.append(faces.reshape(-1, 3).astype(np.int64) + offset)
        all_weights.append(dense)
        offset += len(pos)

    if not all_pos:
        raise IngestError("no rig found: mesh has no triangle primitives")

    vertices = np.vstack(all_pos)
    faces = np.vstack(all_faces)
    weights = np.vstack(all_weights)

    sums = weights.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-2):
        raise IngestError("non-normalized weights: vertex weights do not sum to 1")
    weights = weights / sums[:, None]

    skeleton = Skeleton(
        parents=np.array(bone_parents), rest_local=np.stack(rest_local), names=names
    )
    try:
        rig = SkinnedRig(
            skeleton=skeleton,
            vertices=vertices,
            faces=faces,
            weights=weights,
            inverse_bind=inverse_bind,
        )
    except Exception as exc:
        raise IngestError(str(exc)) from exc
    metadata = {
        "original_joint_indices": [int(j) for j in order],
        "source": str(path),
        "bone_names": names,
    }
    return rig, metadata


def load_scene_gltf(path, dedup: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Merge every triangle primitive of the file, world transforms applied."""
    gf = _GltfFile(path)
    doc = gf.doc
    node_parents = _node_parents(doc)
    nodes = doc.get("nodes", [])
    locals_ = [_node_local(n) for n in nodes]

    worlds = [None] * len(nodes)

    def world(n: int) -> np.ndarray:
        if worlds[n] is None:
            p = node_parents[n]
            worlds[n] = locals_[n] if p == -1 else world(p) @ locals_[n]
        return worlds[n]

    verts, faces = [], []
    offset = 0
    for i, node in enumerate(nodes):
        if "mesh" not in node:
            continue
        mat = world(i)
        for prim in doc["meshes"][node["mesh"]].get("primitives", []):
            if prim.get("mode", 4) != 4 or "POSITION" not in prim.get(
                "attributes", {}
            ):
                continue
            pos = gf.accessor(prim["attributes"]["POSITION"]).astype(np.float64)
            pos = pos @ mat[:3, :3].T + mat[:3, 3]
            if "indices" in prim:
                idx = gf.accessor(prim["indices"]).reshape(-1)
            else:
                idx = np.arange(len(pos))
            if len(idx) % 3:
                raise IngestError("triangle index count not divisible by 3")
            verts.append(pos)
            faces.append(idx.reshape(-1, 3).astype(np.int64) + offset)
            offset += len(pos)
    if not verts:
        raise IngestError("file contains no triangle geometry")
    v = np.vstack(verts)
    f = np.vstack(faces)
    if dedup:
        v, f = dedup_vertices(v, f)
    return v, f


def dedup_vertices(
    vertices: np.ndarray, faces: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Merge exactly coincident vertices, preserving first-seen order."""
    seen: dict[bytes, int] = {}
    remap = np.empty(len(vertices), dtype=np.int64)
    keep = []
    for i, row in enumerate(vertices):
        key = row.tobytes()
        if key in seen:
            remap[i] = seen[key]
        else:
            seen[key] = len(keep)
            remap[i] = len(keep)
            keep.append(i)
    return vertices[keep], remap[faces]
