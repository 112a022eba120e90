"""Independent brute-force oracles used to freeze expected values.

Everything in here is written as literally as possible (plain loops, 4x4
matrices, exhaustive scans) and must stay independent of the library code
paths it is used to check.
"""

from __future__ import annotations

import math

import numpy as np


def homogeneous_matrix(rotation, translation) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = rotation
    m[:3, 3] = translation
    return m


def apply_homogeneous(m: np.ndarray, p) -> np.ndarray:
    ph = np.append(np.asarray(p, dtype=np.float64), 1.0)
    return (m @ ph)[:3]


def brute_force_knn(points: np.ndarray, query, k: int) -> list[int]:
    """k nearest point ids by squared distance, ties broken by lower id."""
    d2 = [float(np.sum((p - query) ** 2)) for p in points]
    order = sorted(range(len(points)), key=lambda i: (d2[i], i))
    return order[: min(k, len(points))]


def brute_force_radius(points: np.ndarray, query, radius: float) -> list[int]:
    out = []
    for i, p in enumerate(points):
        if float(np.sum((p - query) ** 2)) <= radius * radius:
            out.append(i)
    return out


def brute_force_voxel_bins(points: np.ndarray, voxel: float) -> dict[tuple, list[int]]:
    bins: dict[tuple, list[int]] = {}
    for i, p in enumerate(points):
        key = tuple(int(math.floor(c / voxel)) for c in p)
        bins.setdefault(key, []).append(i)
    return bins


def bfs_clusters(points: np.ndarray, link_radius: float) -> list[list[int]]:
    """Connected components of the radius graph by breadth-first search."""
    n = len(points)
    seen = [False] * n
    clusters = []
    for start in range(n):
        if seen[start]:
            continue
        seen[start] = True
        queue = [start]
        comp = []
        while queue:
            i = queue.pop(0)
            comp.append(i)
            for j in range(n):
                if not seen[j] and np.sum((points[i] - points[j]) ** 2) <= link_radius**2:
                    seen[j] = True
                    queue.append(j)
        clusters.append(sorted(comp))
    return clusters


def point_triangle_distance(p, a, b, c) -> float:
    """Exact distance from a point to a 3D triangle (region-by-region)."""
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    ab = b - a
    ac = c - a
    ap = p - a
    d1 = ab @ ap
    d2 = ac @ ap
    if d1 <= 0 and d2 <= 0:
        return float(np.linalg.norm(p - a))
    bp = p - b
    d3 = ab @ bp
    d4 = ac @ bp
    if d3 >= 0 and d4 <= d3:
        return float(np.linalg.norm(p - b))
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        t = d1 / (d1 - d3)
        return float(np.linalg.norm(p - (a + t * ab)))
    cp = p - c
    d5 = ab @ cp
    d6 = ac @ cp
    if d6 >= 0 and d5 <= d6:
        return float(np.linalg.norm(p - c))
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        t = d2 / (d2 - d6)
        return float(np.linalg.norm(p - (a + t * ac)))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return float(np.linalg.norm(p - (b + t * (c - b))))
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    return float(np.linalg.norm(p - (a + v * ab + w * ac)))


def point_mesh_distance(p, vertices: np.ndarray, triangles: np.ndarray) -> float:
    return min(
        point_triangle_distance(p, vertices[i], vertices[j], vertices[k])
        for i, j, k in triangles
    )


def pair_feature(p1, n1, p2, n2):
    """Darboux-frame pair features (alpha, phi, theta) for a directed pair.

    Returns None for degenerate pairs (coincident points or direction
    parallel to the source normal).
    """
    d = np.asarray(p2, dtype=np.float64) - np.asarray(p1, dtype=np.float64)
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        return None
    a1 = float(np.dot(n1, d)) / dist
    a2 = float(np.dot(n2, d)) / dist
    if abs(a2) > abs(a1):
        ns, nt, dvec, phi = np.asarray(n2), np.asarray(n1), -d, -a2
    else:
        ns, nt, dvec, phi = np.asarray(n1), np.asarray(n2), d, a1
    dhat = dvec / dist
    v = np.cross(dhat, ns)
    vn = float(np.linalg.norm(v))
    if vn < 1e-12:
        return None
    v = v / vn
    w = np.cross(ns, v)
    alpha = float(np.dot(v, nt))
    theta = math.atan2(float(np.dot(w, nt)), float(np.dot(ns, nt)))
    return alpha, phi, theta, dist


def _bin11(value: float, lo: float, hi: float) -> int:
    b = int(math.floor(11.0 * (value - lo) / (hi - lo)))
    return min(10, max(0, b))


def brute_force_fpfh(positions: np.ndarray, normals: np.ndarray, radius: float) -> np.ndarray:
    """Literal SPFH/FPFH reimplementation: per-point loops, no vectorization.

    Directed pairs (i -> j) over radius neighbors; 11 bins per feature in
    the order alpha, phi, theta; neighbor SPFHs accumulated with weight
    1/distance; each 11-bin block normalized to sum 100.
    """
    n = len(positions)
    spfh = np.zeros((n, 33))
    neighbor_lists: list[list[int]] = []
    for i in range(n):
        nbrs = []
        for j in range(n):
            if j == i:
                continue
            dist = float(np.linalg.norm(positions[j] - positions[i]))
            if dist <= radius and dist > 0.0:
                nbrs.append(j)
        neighbor_lists.append(nbrs)
        for j in nbrs:
            feat = pair_feature(positions[i], normals[i], positions[j], normals[j])
            if feat is None:
                continue
            alpha, phi, theta, _ = feat
            spfh[i, _bin11(alpha, -1.0, 1.0)] += 1.0
            spfh[i, 11 + _bin11(phi, -1.0, 1.0)] += 1.0
            spfh[i, 22 + _bin11(theta, -math.pi, math.pi)] += 1.0

    fpfh = np.zeros((n, 33))
    for i in range(n):
        acc = spfh[i].copy()
        nbrs = neighbor_lists[i]
        if nbrs:
            weighted = np.zeros(33)
            for j in nbrs:
                dist = float(np.linalg.norm(positions[j] - positions[i]))
                weighted += spfh[j] / dist
            acc += weighted / len(nbrs)
        for block in range(3):
            s = acc[block * 11 : block * 11 + 11].sum()
            if s > 0:
                acc[block * 11 : block * 11 + 11] *= 100.0 / s
        fpfh[i] = acc
    return fpfh
