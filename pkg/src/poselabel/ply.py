"""Minimal PLY reader/writer (ASCII and binary little-endian).

Point clouds use vertex properties x, y, z [, red, green, blue u8]
[, nx, ny, nz]; colors are u8 on disk and [0, 1] in memory. Meshes add a
face element with a vertex_indices list property.
"""

from __future__ import annotations

import struct

import numpy as np

from .cloud import PointCloud

_SCALAR_TYPES = {
    "char": "i1",
    "int8": "i1",
    "uchar": "u1",
    "uint8": "u1",
    "short": "i2",
    "int16": "i2",
    "ushort": "u2",
    "uint16": "u2",
    "int": "i4",
    "int32": "i4",
    "uint": "u4",
    "uint32": "u4",
    "float": "f4",
    "float32": "f4",
    "double": "f8",
    "float64": "f8",
}


class PlyParseError(ValueError):
    pass


def _parse_header(lines: list[bytes]):
    if not lines or lines[0].strip() != b"ply":
        raise PlyParseError("missing 'ply' magic line")
    fmt = None
    elements = []  # (name, count, [(prop_name, dtype_or_list_spec)])
    for raw in lines[1:]:
        parts = raw.decode("ascii", errors="replace").split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise PlyParseError(f"unsupported PLY format {fmt!r}")
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise PlyParseError("property before any element")
            if parts[1] == "list":
                elements[-1][2].append(
                    (parts[4], ("list", _SCALAR_TYPES[parts[2]], _SCALAR_TYPES[parts[3]]))
                )
            else:
                elements[-1][2].append((parts[2], _SCALAR_TYPES[parts[1]]))
        elif parts[0] == "end_header":
            break
        else:
            raise PlyParseError(f"unrecognized header line {raw!r}")
    if fmt is None:
        raise PlyParseError("missing format line")
    return fmt, elements


def read_ply_elements(path) -> dict[str, dict[str, np.ndarray | list]]:
    """Parse a PLY file into {element: {property: array-or-list-of-arrays}}."""
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header")
    if end < 0:
        raise PlyParseError("missing end_header")
    end = data.index(b"\n", end) + 1
    header_lines = data[:end].splitlines()
    fmt, elements = _parse_header(header_lines)
    body = data[end:]

    out: dict[str, dict[str, np.ndarray | list]] = {}
    if fmt == "ascii":
        tokens = body.split()
        pos = 0
        for name, count, props in elements:
            cols: dict[str, list] = {p: [] for p, _ in props}
            for _ in range(count):
                for pname, spec in props:
                    if isinstance(spec, tuple):  # list property
                        n = int(tokens[pos]); pos += 1
                        vals = [float(tokens[pos + i]) for i in range(n)]
                        pos += n
                        cols[pname].append(np.array(vals))
                    else:
                        cols[pname].append(float(tokens[pos])); pos += 1
            out[name] = {
                p: (cols[p] if isinstance(spec, tuple) else np.array(cols[p]))
                for p, spec in props
            }
    else:
        offset = 0
        for name, count, props in elements:
            if any(isinstance(spec, tuple) for _, spec in props):
                cols = {p: [] for p, _ in props}
                for _ in range(count):
                    for pname, spec in props:
                        if isinstance(spec, tuple):
                            _, count_t, item_t = spec
                            cdt = np.dtype("<" + count_t)
                            n = int(np.frombuffer(body, cdt, 1, offset)[0])
                            offset += cdt.itemsize
                            idt = np.dtype("<" + item_t)
                            cols[pname].append(
                                np.frombuffer(body, idt, n, offset).astype(np.float64)
                            )
                            offset += idt.itemsize * n
                        else:
                            sdt = np.dtype("<" + spec)
                            cols[pname].append(float(np.frombuffer(body, sdt, 1, offset)[0]))
                            offset += sdt.itemsize
                out[name] = {
                    p: (cols[p] if isinstance(spec, tuple) else np.array(cols[p]))
                    for p, spec in props
                }
            else:
                dt = np.dtype([(p, "<" + spec) for p, spec in props])
                rows = np.frombuffer(body, dt, count, offset)
                offset += dt.itemsize * count
                out[name] = {p: rows[p].astype(np.float64) for p, _ in props}
    return out


def read_cloud_ply(path) -> PointCloud:
    elements = read_ply_elements(path)
    if "vertex" not in elements:
        raise PlyParseError("no vertex element")
    v = elements["vertex"]
    for axis in ("x", "y", "z"):
        if axis not in v:
            raise PlyParseError(f"vertex element lacks property {axis!r}")
    positions = np.column_stack([v["x"], v["y"], v["z"]])
    colors = None
    if all(ch in v for ch in ("red", "green", "blue")):
        colors = np.column_stack([v["red"], v["green"], v["blue"]]) / 255.0
    normals = None
    if all(ch in v for ch in ("nx", "ny", "nz")):
        normals = np.column_stack([v["nx"], v["ny"], v["nz"]])
        norms = np.linalg.norm(normals, axis=1)
        normals = normals / np.where(norms == 0, 1.0, norms)[:, None]
    return PointCloud(positions, colors, normals)


def write_cloud_ply(path, cloud: PointCloud, binary: bool = True) -> None:
    n = len(cloud)
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0"]
    header.append(f"element vertex {n}")
    header += ["property double x", "property double y", "property double z"]
    if cloud.has_colors:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    if cloud.has_normals:
        header += ["property double nx", "property double ny", "property double nz"]
    header.append("end_header")

    colors_u8 = None
    if cloud.has_colors:
        colors_u8 = np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8)

    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if cloud.has_colors:
                fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            if cloud.has_normals:
                fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
            rows = np.empty(n, dtype=np.dtype(fields))
            for i, axis in enumerate("xyz"):
                rows[axis] = cloud.positions[:, i]
            if cloud.has_colors:
                for i, ch in enumerate(("red", "green", "blue")):
                    rows[ch] = colors_u8[:, i]
            if cloud.has_normals:
                for i, ch in enumerate(("nx", "ny", "nz")):
                    rows[ch] = cloud.normals[:, i]
            f.write(rows.tobytes())
        else:
            for i in range(n):
                parts = [repr(float(c)) for c in cloud.positions[i]]
                if cloud.has_colors:
                    parts += [str(int(c)) for c in colors_u8[i]]
                if cloud.has_normals:
                    parts += [repr(float(c)) for c in cloud.normals[i]]
                f.write((" ".join(parts) + "\n").encode("ascii"))


def write_mesh_ply(path, vertices: np.ndarray, triangles: np.ndarray, binary: bool = True) -> None:
    header = [
        "ply",
        f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
        f"element vertex {len(vertices)}",
        "property double x",
        "property double y",
        "property double z",
        f"element face {len(triangles)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    with open(path, "wb") as f:
        f.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            f.write(np.asarray(vertices, dtype="<f8").tobytes())
            for tri in np.asarray(triangles, dtype=np.int64):
                f.write(struct.pack("<B3i", 3, int(tri[0]), int(tri[1]), int(tri[2])))
        else:
            for v in vertices:
                f.write((" ".join(repr(float(c)) for c in v) + "\n").encode("ascii"))
            for tri in triangles:
                f.write((f"3 {int(tri[0])} {int(tri[1])} {int(tri[2])}\n").encode("ascii"))
