"""Point-cloud container, multi-view merging, downsampling, and neighbor queries.

Clouds are immutable after construction: positions in meters, optional RGB
colors in [0, 1], optional unit normals. All per-point loops are vectorized
with fixed reduction order so results are deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree


class AttributeMismatchError(ValueError):
    """Clouds being merged disagree on the presence of colors or normals."""


class NonPositiveVoxelError(ValueError):
    pass


class InsufficientPointsError(ValueError):
    pass


class EmptyIndexError(ValueError):
    pass


def _as_points(arr, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.ndim != 2 or out.shape[1] != 3:
        raise ValueError(f"{name} must be an (N, 3) array, got shape {out.shape}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N points with optional per-point colors and unit normals."""

    positions: np.ndarray
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None

    def __post_init__(self):
        pos = _as_points(self.positions, "positions")
        object.__setattr__(self, "positions", pos)
        n = len(pos)
        if self.colors is not None:
            col = _as_points(self.colors, "colors")
            if len(col) != n:
                raise ValueError(f"colors has length {len(col)}, expected {n}")
            object.__setattr__(self, "colors", col)
        if self.normals is not None:
            nrm = _as_points(self.normals, "normals")
            if len(nrm) != n:
                raise ValueError(f"normals has length {len(nrm)}, expected {n}")
            if n and np.abs(np.linalg.norm(nrm, axis=1) - 1.0).max() > 1e-6:
                raise ValueError("normals must have unit norm")
            object.__setattr__(self, "normals", nrm)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def has_colors(self) -> bool:
        return self.colors is not None

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def select(self, indices) -> "PointCloud":
        """Subset cloud keeping attribute arrays consistent."""
        idx = np.asarray(indices)
        return PointCloud(
            self.positions[idx],
            self.colors[idx] if self.colors is not None else None,
            self.normals[idx] if self.normals is not None else None,
        )

    def with_normals(self, normals) -> "PointCloud":
        return PointCloud(self.positions, self.colors, normals)


def empty_cloud(colors: bool = False, normals: bool = False) -> PointCloud:
    z = np.zeros((0, 3))
    return PointCloud(z, z.copy() if colors else None, z.copy() if normals else None)


def merge(clouds: list[PointCloud]) -> PointCloud:
    """Concatenate clouds; total size is the sum, attributes preserved per point.

    All inputs must agree on whether colors and normals are present.
    """
    if not clouds:
        return empty_cloud()
    has_c = clouds[0].has_colors
    has_n = clouds[0].has_normals
    for c in clouds[1:]:
        if c.has_colors != has_c or c.has_normals != has_n:
            raise AttributeMismatchError(
                "all clouds must agree on presence of colors and normals"
            )
    return PointCloud(
        np.concatenate([c.positions for c in clouds], axis=0),
        np.concatenate([c.colors for c in clouds], axis=0) if has_c else None,
        np.concatenate([c.normals for c in clouds], axis=0) if has_n else None,
    )


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """One point per occupied voxel at the centroid of its members.

    Voxel key is floor(position / voxel) per axis; colors and normals are
    averaged (normals re-normalized). Output is ordered by voxel key, which
    makes the reduction deterministic.
    """
    if voxel <= 0:
        raise NonPositiveVoxelError(f"voxel must be > 0, got {voxel}")
    n = len(cloud)
    if n == 0:
        return cloud
    keys = np.floor(cloud.positions / voxel).astype(np.int64)
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    sk = keys[order]
    starts = np.flatnonzero(
        np.r_[True, np.any(sk[1:] != sk[:-1], axis=1)]
    )
    counts = np.diff(np.r_[starts, n])

    def group_mean(values):
        sums = np.add.reduceat(values[order], starts, axis=0)
        return sums / counts[:, None]

    positions = group_mean(cloud.positions)
    colors = group_mean(cloud.colors) if cloud.colors is not None else None
    normals = None
    if cloud.normals is not None:
        normals = group_mean(cloud.normals)
        norms = np.linalg.norm(normals, axis=1)
        degenerate = norms < 1e-12
        if degenerate.any():
            # opposing members cancel; fall back to the first member's normal
            normals[degenerate] = cloud.normals[order][starts[degenerate]]
            norms = np.linalg.norm(normals, axis=1)
        normals /= norms[:, None]
    return PointCloud(positions, colors, normals)


def estimate_normals(cloud: PointCloud, k: int = 30, viewpoint=(0.0, 0.0, 0.0)) -> PointCloud:
    """Per-point normals from the covariance of the k nearest neighbors.

    The normal is the smallest-eigenvalue eigenvector, sign-flipped to face
    the viewpoint. The query point itself counts among its neighbors.
    """
    n = len(cloud)
    if k < 3 or n < k:
        raise InsufficientPointsError(f"need cloud size >= k >= 3, got n={n}, k={k}")
    vp = np.asarray(viewpoint, dtype=np.float64)
    tree = cKDTree(cloud.positions)
    _, idx = tree.query(cloud.positions, k=k)
    nbrs = cloud.positions[idx]  # (n, k, 3)
    centered = nbrs - nbrs.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vecs = np.linalg.eigh(cov)
    normals = vecs[:, :, 0]  # smallest eigenvalue first
    flip = np.einsum("ni,ni->n", normals, vp[None, :] - cloud.positions) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    return cloud.with_normals(normals)


@dataclass
class SpatialIndex:
    """Exact nearest-neighbor and radius queries over a cloud's positions.

    Backed by a kd-tree; results match a brute-force scan, with k-nearest
    ties broken by lower point id and radius results sorted by id.
    """

    cloud: PointCloud
    _tree: cKDTree = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.cloud) == 0:
            raise EmptyIndexError("cannot build an index over an empty cloud")
        self._tree = cKDTree(self.cloud.positions)

    def __len__(self) -> int:
        return len(self.cloud)

    def knn(self, query, k: int) -> np.ndarray:
        """Ids of the k nearest points (ties broken by lower id)."""
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        q = np.asarray(query, dtype=np.float64)
        kk = min(k, len(self.cloud))
        dists, _ = self._tree.query(q, k=kk)
        dk = float(np.atleast_1d(dists)[-1])
        # pull in every point at the boundary distance (slightly inflated to
        # survive last-ulp rounding) so ties resolve by id during the sort
        r = dk * (1.0 + 1e-9) + 1e-300
        cand = np.array(self._tree.query_ball_point(q, r), dtype=np.int64)
        d2 = np.sum((self.cloud.positions[cand] - q) ** 2, axis=1)
        order = np.lexsort((cand, d2))
        return cand[order][:kk]

    def radius(self, query, radius: float) -> np.ndarray:
        """Ids of all points within `radius` of the query, sorted by id."""
        if radius <= 0:
            raise ValueError(f"radius must be > 0, got {radius}")
        q = np.asarray(query, dtype=np.float64)
        ids = self._tree.query_ball_point(q, radius)
        return np.sort(np.array(ids, dtype=np.int64))
