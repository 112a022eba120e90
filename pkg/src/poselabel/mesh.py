"""Triangle meshes: OBJ/PLY loading and uniform area-weighted surface sampling.

The sampled model cloud is the registration source; mesh colors are ignored
(scene color is used only for segmentation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ply
from .cloud import PointCloud


class MeshParseError(ValueError):
    pass


class MeshIndexError(ValueError):
    pass


class EmptyMeshError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray  # (M, 3) meters
    triangles: np.ndarray  # (F, 3) vertex indices

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must be (M, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError(f"triangles must be (F, 3), got {t.shape}")
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise MeshIndexError(
                f"triangle index out of range: max {t.max()} over {len(v)} vertices"
            )
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)


def triangle_areas(mesh: TriangleMesh) -> np.ndarray:
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def _parse_obj(path) -> TriangleMesh:
    vertices: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8", errors="replace") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshParseError(f"{path}:{lineno}: vertex needs 3 coordinates")
                try:
                    vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
                except ValueError as e:
                    raise MeshParseError(f"{path}:{lineno}: {e}") from None
            elif parts[0] == "f":
                if len(parts) < 4:
                    raise MeshParseError(f"{path}:{lineno}: face needs >= 3 vertices")
                idx = []
                for token in parts[1:]:
                    try:
                        raw = int(token.split("/")[0])
                    except ValueError:
                        raise MeshParseError(
                            f"{path}:{lineno}: bad face index {token!r}"
                        ) from None
                    # OBJ indices are 1-based; negative counts from the end
                    idx.append(raw - 1 if raw > 0 else len(vertices) + raw)
                # fan-triangulate polygonal faces
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
            # other records (vt, vn, usemtl, ...) are ignored
    v = np.array(vertices, dtype=np.float64).reshape(-1, 3)
    t = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if len(t) and (t.min() < 0 or t.max() >= len(v)):
        raise MeshIndexError(f"{path}: face index out of range ({t.max() + 1} over {len(v)} vertices)")
    return TriangleMesh(v, t)


def _parse_ply_mesh(path) -> TriangleMesh:
    elements = ply.read_ply_elements(path)
    if "vertex" not in elements or "face" not in elements:
        raise MeshParseError(f"{path}: PLY mesh needs vertex and face elements")
    v = elements["vertex"]
    vertices = np.column_stack([v["x"], v["y"], v["z"]])
    face_prop = None
    for name in ("vertex_indices", "vertex_index"):
        if name in elements["face"]:
            face_prop = elements["face"][name]
            break
    if face_prop is None:
        raise MeshParseError(f"{path}: face element lacks vertex_indices")
    faces = []
    for poly in face_prop:
        idx = [int(i) for i in poly]
        if len(idx) < 3:
            raise MeshParseError(f"{path}: face with fewer than 3 vertices")
        for k in range(1, len(idx) - 1):
            faces.append([idx[0], idx[k], idx[k + 1]])
    t = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if len(t) and (t.min() < 0 or t.max() >= len(vertices)):
        raise MeshIndexError(
            f"{path}: face index out of range ({t.max()} over {len(vertices)} vertices)"
        )
    return TriangleMesh(vertices, t)


def load_mesh(path) -> TriangleMesh:
    """Load an OBJ (v/f records) or PLY (ASCII/binary) triangle mesh; meters."""
    with open(path, "rb") as f:
        magic = f.read(3)
    if magic == b"ply":
        return _parse_ply_mesh(path)
    return _parse_obj(path)


def save_mesh_obj(path, mesh: TriangleMesh) -> None:
    with open(path, "w", encoding="ascii") as f:
        for v in mesh.vertices:
            f.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for t in mesh.triangles:
            f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def save_mesh_ply(path, mesh: TriangleMesh, binary: bool = True) -> None:
    ply.write_mesh_ply(path, mesh.vertices, mesh.triangles, binary=binary)


def sample_uniform(mesh: TriangleMesh, n: int, seed: int, with_normals: bool = False) -> PointCloud:
    """n points i.i.d. uniform over the surface, deterministic per seed.

    Triangles are chosen with probability proportional to area (zero-area
    triangles never sampled); points by folded barycentric coordinates.
    With `with_normals`, each point carries its triangle's face normal,
    which is outward for meshes with consistent counter-clockwise winding.
    """
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    areas = triangle_areas(mesh)
    total = areas.sum()
    if len(mesh.triangles) == 0 or total <= 0:
        raise EmptyMeshError("mesh has no positive-area triangle")
    rng = np.random.Generator(np.random.Philox(seed))
    cdf = np.cumsum(areas) / total
    tri = np.searchsorted(cdf, rng.random(n), side="right")
    tri = np.minimum(tri, len(areas) - 1)
    u = rng.random(n)
    v = rng.random(n)
    fold = u + v > 1.0
    u[fold] = 1.0 - u[fold]
    v[fold] = 1.0 - v[fold]
    a = mesh.vertices[mesh.triangles[tri, 0]]
    b = mesh.vertices[mesh.triangles[tri, 1]]
    c = mesh.vertices[mesh.triangles[tri, 2]]
    positions = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    normals = None
    if with_normals:
        face = np.cross(b - a, c - a)
        normals = face / np.linalg.norm(face, axis=1)[:, None]
    return PointCloud(positions, normals=normals)
