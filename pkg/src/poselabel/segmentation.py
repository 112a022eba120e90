"""Isolate the end-effector by its distinct color plus largest-cluster selection.

HSV thresholding (hue band possibly wrapping 360, saturation/value floors)
followed by single-linkage euclidean clustering; the largest surviving
cluster is taken as the end-effector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud


class MissingColorsError(ValueError):
    pass


@dataclass(frozen=True)
class ColorFilter:
    """Hue band in degrees (wraps when hue_min > hue_max) with s/v floors."""

    hue_min: float = 90.0
    hue_max: float = 150.0
    sat_min: float = 0.5
    val_min: float = 0.2

    def __post_init__(self):
        if not (0.0 <= self.sat_min <= 1.0 and 0.0 <= self.val_min <= 1.0):
            raise ValueError("sat_min and val_min must be in [0, 1]")
        if not (0.0 <= self.hue_min < 360.0 and 0.0 <= self.hue_max < 360.0):
            raise ValueError("hue bounds must be in [0, 360)")


@dataclass(frozen=True)
class ClusterParams:
    link_radius: float
    min_cluster_size: int = 50

    def __post_init__(self):
        if self.link_radius <= 0:
            raise ValueError(f"link_radius must be > 0, got {self.link_radius}")
        if self.min_cluster_size < 1:
            raise ValueError(f"min_cluster_size must be >= 1, got {self.min_cluster_size}")


def rgb_to_hsv(rgb) -> np.ndarray:
    """Hexcone RGB -> (hue degrees, saturation, value); hue 0 when s == 0.

    Accepts a single triple or an (N, 3) array.
    """
    arr = np.asarray(rgb, dtype=np.float64)
    single = arr.ndim == 1
    pts = np.atleast_2d(arr)
    if pts.shape[1] != 3:
        raise ValueError(f"expected RGB triples, got shape {arr.shape}")
    if pts.size and (pts.min() < 0.0 or pts.max() > 1.0):
        raise ValueError("RGB components must be in [0, 1]")
    r, g, b = pts[:, 0], pts[:, 1], pts[:, 2]
    cmax = pts.max(axis=1)
    cmin = pts.min(axis=1)
    delta = cmax - cmin
    h = np.zeros_like(cmax)
    nz = delta > 0
    rmax = nz & (cmax == r)
    gmax = nz & (cmax == g) & ~rmax
    bmax = nz & ~rmax & ~gmax
    h[rmax] = ((g - b)[rmax] / delta[rmax]) % 6.0
    h[gmax] = (b - r)[gmax] / delta[gmax] + 2.0
    h[bmax] = (r - g)[bmax] / delta[bmax] + 4.0
    h *= 60.0
    s = np.where(cmax > 0, delta / np.where(cmax > 0, cmax, 1.0), 0.0)
    out = np.column_stack([h, s, cmax])
    return out[0] if single else out


def color_mask(colors: np.ndarray, f: ColorFilter) -> np.ndarray:
    hsv = np.atleast_2d(rgb_to_hsv(colors))
    h, s, v = hsv[:, 0], hsv[:, 1], hsv[:, 2]
    if f.hue_min <= f.hue_max:
        in_hue = (h >= f.hue_min) & (h <= f.hue_max)
    else:
        in_hue = (h >= f.hue_min) | (h <= f.hue_max)
    return in_hue & (s >= f.sat_min) & (v >= f.val_min)


def filter_by_color(cloud: PointCloud, f: ColorFilter) -> PointCloud:
    if not cloud.has_colors:
        raise MissingColorsError("cloud has no colors to filter on")
    if len(cloud) == 0:
        return cloud
    return cloud.select(np.flatnonzero(color_mask(cloud.colors, f)))


def euclidean_clusters(cloud: PointCloud, p: ClusterParams) -> list[np.ndarray]:
    """Connected components of the radius graph (edge iff distance <= link_radius).

    Components smaller than min_cluster_size are dropped; output is sorted by
    size descending, ties by smallest member id; members sorted ascending.

    Points are bucketed into grid cells of side link_radius/sqrt(3); a cell's
    diameter then never exceeds the link radius, so whole cells collapse into
    union-find super-nodes and only nearby cell pairs need distance checks.
    """
    n = len(cloud)
    if n == 0:
        raise ValueError("cloud must be nonempty")
    r = p.link_radius
    cell = r / np.sqrt(3.0)
    keys = np.floor(cloud.positions / cell).astype(np.int64)
    cells: dict[tuple, np.ndarray] = {}
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    sk = keys[order]
    starts = np.flatnonzero(np.r_[True, np.any(sk[1:] != sk[:-1], axis=1)])
    for a, b in zip(starts, np.r_[starts[1:], n]):
        cells[tuple(sk[a])] = np.sort(order[a:b])

    cell_keys = list(cells)
    cell_id = {k: i for i, k in enumerate(cell_keys)}
    parent = list(range(len(cell_keys)))

    def find(i: int) -> int:
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    # cell offsets whose minimum cell-to-cell distance can still be <= r
    offsets = []
    for dx in range(-2, 3):
        for dy in range(-2, 3):
            for dz in range(-2, 3):
                gap = sum(max(abs(d) - 1, 0) ** 2 for d in (dx, dy, dz))
                if gap * cell * cell <= r * r and (dx, dy, dz) > (0, 0, 0):
                    offsets.append((dx, dy, dz))

    r2 = r * r
    for key in cell_keys:
        ia = cell_id[key]
        pa = cloud.positions[cells[key]]
        for off in offsets:
            nkey = (key[0] + off[0], key[1] + off[1], key[2] + off[2])
            ib = cell_id.get(nkey)
            if ib is None:
                continue
            ra, rb = find(ia), find(ib)
            if ra == rb:
                continue
            pb = cloud.positions[cells[nkey]]
            d2 = np.sum((pa[:, None, :] - pb[None, :, :]) ** 2, axis=2)
            if d2.min() <= r2:
                parent[rb] = ra

    components: dict[int, list[np.ndarray]] = {}
    for key in cell_keys:
        components.setdefault(find(cell_id[key]), []).append(cells[key])
    members = [np.sort(np.concatenate(groups)) for groups in components.values()]
    members = [m for m in members if len(m) >= p.min_cluster_size]
    members.sort(key=lambda m: (-len(m), m[0]))
    return members


def extract_end_effector(cloud: PointCloud, f: ColorFilter, p: ClusterParams) -> PointCloud:
    """Color filter, then the largest surviving cluster; empty cloud if none."""
    filtered = filter_by_color(cloud, f)
    if len(filtered) == 0:
        return filtered
    clusters = euclidean_clusters(filtered, p)
    if not clusters:
        return filtered.select(np.array([], dtype=np.int64))
    return filtered.select(clusters[0])
