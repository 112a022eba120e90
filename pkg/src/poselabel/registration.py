"""Rigid alignment of the model cloud to the segmented scene cloud.

Kabsch closed form for paired correspondences, 33-bin FPFH descriptors for
correspondence proposals, RANSAC for the coarse global alignment, ICP for
local refinement. The returned transform always maps the SOURCE (model)
frame into the TARGET (scene/world) frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from . import geometry as geo
from .cloud import PointCloud, estimate_normals, voxel_downsample


class DegenerateConfigurationError(ValueError):
    pass


class MissingNormalsError(ValueError):
    pass


class TooFewPointsError(ValueError):
    pass


@dataclass(frozen=True)
class RansacParams:
    inlier_distance: float
    max_iterations: int = 100_000
    min_iterations: int = 3000
    confidence: float = 0.999
    sample_size: int = 3
    edge_similarity: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.sample_size < 3:
            raise ValueError(f"sample_size must be >= 3, got {self.sample_size}")
        if not (0.0 < self.confidence < 1.0):
            raise ValueError(f"confidence must be in (0, 1), got {self.confidence}")
        if self.inlier_distance <= 0:
            raise ValueError(f"inlier_distance must be > 0, got {self.inlier_distance}")
        if self.min_iterations < 1:
            raise ValueError(f"min_iterations must be >= 1, got {self.min_iterations}")


@dataclass(frozen=True)
class IcpParams:
    max_correspondence_distance: float
    max_iterations: int = 50
    relative_rmse: float = 1e-6
    variant: str = "auto"  # auto | point_to_point | point_to_plane

    def __post_init__(self):
        if self.max_correspondence_distance <= 0:
            raise ValueError(
                f"max_correspondence_distance must be > 0, got {self.max_correspondence_distance}"
            )
        if self.variant not in ("auto", "point_to_point", "point_to_plane"):
            raise ValueError(f"unknown ICP variant {self.variant!r}")


@dataclass(frozen=True)
class RegistrationResult:
    """Transform (source frame -> target frame) with its quality measures.

    fitness: fraction of source points with a target correspondence within
    the inlier/correspondence distance; inlier_rmse over those matches
    (0 by convention when fitness is 0).
    """

    transform: geo.RigidTransform
    fitness: float
    inlier_rmse: float
    iterations: int
    converged: bool = True
    history: tuple = field(default=(), repr=False, compare=False)

    def to_json_dict(self) -> dict:
        q = self.transform.quat
        t = self.transform.translation
        return {
            "q": [float(c) for c in q],
            "t": [float(c) for c in t],
            "fitness": float(self.fitness),
            "inlier_rmse": float(self.inlier_rmse),
            "iterations": int(self.iterations),
        }


def kabsch(src, dst) -> geo.RigidTransform:
    """Least-squares rigid transform mapping src[i] onto dst[i] (no scale).

    SVD of the cross-covariance with determinant correction; raises on
    configurations whose cross-covariance has rank < 2 (collinear points).
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("src and dst must be matching (N, 3) arrays")
    if len(src) < 3:
        raise DegenerateConfigurationError("need at least 3 correspondences")
    cs = src.mean(axis=0)
    cd = dst.mean(axis=0)
    h = (src - cs).T @ (dst - cd)
    u, s, vt = np.linalg.svd(h)
    if s[1] <= max(s[0] * 1e-12, 1e-300):
        raise DegenerateConfigurationError("cross-covariance rank < 2 (collinear points)")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return geo.RigidTransform(geo.nearest_rotation(rot), cd - rot @ cs)


# --- FPFH ------------------------------------------------------------------

_N_BINS = 11


def _pair_features(p_i, n_i, p_j, n_j, dist):
    """Vectorized Darboux pair features for directed pairs (alpha, phi, theta).

    Degenerate pairs (direction parallel to the chosen source normal) are
    flagged invalid and contribute nothing to the histograms.
    """
    d = p_j - p_i
    a1 = np.einsum("ij,ij->i", n_i, d) / dist
    a2 = np.einsum("ij,ij->i", n_j, d) / dist
    swap = np.abs(a2) > np.abs(a1)
    ns = np.where(swap[:, None], n_j, n_i)
    nt = np.where(swap[:, None], n_i, n_j)
    dvec = np.where(swap[:, None], -d, d)
    phi = np.where(swap, -a2, a1)
    dhat = dvec / dist[:, None]
    v = np.cross(dhat, ns)
    vn = np.linalg.norm(v, axis=1)
    valid = vn >= 1e-12
    vn_safe = np.where(valid, vn, 1.0)
    v /= vn_safe[:, None]
    w = np.cross(ns, v)
    alpha = np.einsum("ij,ij->i", v, nt)
    theta = np.arctan2(np.einsum("ij,ij->i", w, nt), np.einsum("ij,ij->i", ns, nt))
    return alpha, phi, theta, valid


def _bin_index(values, lo, hi):
    b = np.floor(_N_BINS * (values - lo) / (hi - lo)).astype(np.int64)
    return np.clip(b, 0, _N_BINS - 1)


def compute_fpfh(cloud: PointCloud, radius: float) -> np.ndarray:
    """33-bin FPFH per point: SPFH over radius neighbors, then 1/distance
    weighted neighbor accumulation; each 11-bin block normalized to sum 100
    (all-zero for isolated points)."""
    if not cloud.has_normals:
        raise MissingNormalsError("FPFH needs normals")
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    n = len(cloud)
    pos = cloud.positions
    nrm = cloud.normals
    if n == 0:
        return np.zeros((0, 33))
    tree = cKDTree(pos)
    neighbor_lists = tree.query_ball_point(pos, radius)

    i_idx = np.repeat(np.arange(n), [len(l) for l in neighbor_lists])
    j_idx = np.concatenate([np.asarray(l, dtype=np.int64) for l in neighbor_lists])
    keep = i_idx != j_idx
    i_idx, j_idx = i_idx[keep], j_idx[keep]
    dist = np.linalg.norm(pos[j_idx] - pos[i_idx], axis=1)
    nonzero = dist > 0
    i_idx, j_idx, dist = i_idx[nonzero], j_idx[nonzero], dist[nonzero]

    spfh = np.zeros((n, 33))
    if len(i_idx):
        alpha, phi, theta, valid = _pair_features(
            pos[i_idx], nrm[i_idx], pos[j_idx], nrm[j_idx], dist
        )
        iv = i_idx[valid]
        ba = _bin_index(alpha[valid], -1.0, 1.0)
        bp = _bin_index(phi[valid], -1.0, 1.0)
        bt = _bin_index(theta[valid], -math.pi, math.pi)
        size = n * 33
        flat = np.bincount(iv * 33 + ba, minlength=size)
        flat += np.bincount(iv * 33 + 11 + bp, minlength=size)
        flat += np.bincount(iv * 33 + 22 + bt, minlength=size)
        spfh = flat.reshape(n, 33).astype(np.float64)

    fpfh = spfh.copy()
    if len(i_idx):
        weights = sparse.csr_matrix((1.0 / dist, (i_idx, j_idx)), shape=(n, n))
        contrib = weights @ spfh
        k = np.bincount(i_idx, minlength=n).astype(np.float64)
        has = k > 0
        fpfh[has] += contrib[has] / k[has, None]

    for block in range(3):
        chunk = fpfh[:, block * 11 : block * 11 + 11]
        sums = chunk.sum(axis=1)
        nz = sums > 0
        chunk[nz] *= (100.0 / sums[nz])[:, None]
    return fpfh


def match_descriptors(src_desc: np.ndarray, tgt_desc: np.ndarray) -> np.ndarray:
    """Nearest-neighbor target index per source descriptor (L2, ties -> lower id)."""
    src = np.asarray(src_desc, dtype=np.float64)
    tgt = np.asarray(tgt_desc, dtype=np.float64)
    tgt_sq = np.einsum("ij,ij->i", tgt, tgt)
    out = np.empty(len(src), dtype=np.int64)
    block = max(1, int(4e6 // max(len(tgt), 1)))
    for start in range(0, len(src), block):
        chunk = src[start : start + block]
        d2 = np.einsum("ij,ij->i", chunk, chunk)[:, None] - 2.0 * chunk @ tgt.T + tgt_sq[None, :]
        out[start : start + block] = np.argmin(d2, axis=1)
    return out


def match_descriptor_candidates(
    src_desc: np.ndarray,
    tgt_desc: np.ndarray,
    max_candidates: int = 8,
    rng: np.random.Generator | None = None,
) -> list[np.ndarray]:
    """Per source point, every target id tied for nearest descriptor.

    Identical local geometry (e.g. points on flat faces) produces exactly
    equal descriptors; resolving such ties to one fixed target collapses the
    correspondence set and starves RANSAC of usable samples. Oversized tie
    sets are reduced to `max_candidates` with the given rng (deterministic
    when seeded); distinct descriptors keep their single nearest match.
    """
    src = np.asarray(src_desc, dtype=np.float64)
    tgt = np.asarray(tgt_desc, dtype=np.float64)
    tgt_sq = np.einsum("ij,ij->i", tgt, tgt)
    out: list[np.ndarray] = []
    block = max(1, int(4e6 // max(len(tgt), 1)))
    for start in range(0, len(src), block):
        chunk = src[start : start + block]
        d2 = np.einsum("ij,ij->i", chunk, chunk)[:, None] - 2.0 * chunk @ tgt.T + tgt_sq[None, :]
        dmin = d2.min(axis=1)
        for row, m in zip(d2, dmin):
            ties = np.flatnonzero(row <= m + 1e-9)
            if len(ties) > max_candidates and rng is not None:
                ties = np.sort(rng.choice(ties, size=max_candidates, replace=False))
            out.append(ties)
    return out


def ransac_register(
    source: PointCloud,
    target: PointCloud,
    src_desc: np.ndarray,
    tgt_desc: np.ndarray,
    p: RansacParams,
) -> RegistrationResult:
    """Feature-matched RANSAC: sample source points, take their descriptor
    matches (drawing uniformly among tied nearest candidates), prune by
    edge-length similarity, fit Kabsch, score fitness as the inlier fraction
    over all source points. Deterministic under p.seed; stops early once
    1-(1-w^s)^k >= confidence with w the best inlier ratio."""
    ns, nt = len(source), len(target)
    if ns < p.sample_size or nt < p.sample_size:
        raise TooFewPointsError(f"need >= {p.sample_size} points, got {ns} and {nt}")
    if len(src_desc) != ns or len(tgt_desc) != nt:
        raise ValueError("descriptors must align with cloud points")
    rng = np.random.Generator(np.random.Philox(p.seed))
    candidates = match_descriptor_candidates(src_desc, tgt_desc, rng=rng)
    tree = cKDTree(target.positions)

    best_transform = geo.identity()
    best_fitness = -1.0
    best_rmse = math.inf
    iterations = 0
    for iterations in range(1, p.max_iterations + 1):
        s_idx = rng.choice(ns, size=p.sample_size, replace=False)
        t_idx = np.array(
            [c[rng.integers(len(c))] if len(c) > 1 else c[0] for c in (candidates[i] for i in s_idx)]
        )
        src_pts = source.positions[s_idx]
        tgt_pts = target.positions[t_idx]

        ok = True
        for a in range(p.sample_size):
            for b in range(a + 1, p.sample_size):
                ls = np.linalg.norm(src_pts[a] - src_pts[b])
                lt = np.linalg.norm(tgt_pts[a] - tgt_pts[b])
                if ls <= 0 or lt <= 0 or min(ls, lt) < p.edge_similarity * max(ls, lt):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            try:
                candidate = kabsch(src_pts, tgt_pts)
            except DegenerateConfigurationError:
                ok = False
        if ok:
            residual = np.linalg.norm(geo.apply(candidate, src_pts) - tgt_pts, axis=1)
            ok = bool((residual <= p.inlier_distance).all())
        if ok:
            d, _ = tree.query(geo.apply(candidate, source.positions))
            inliers = d <= p.inlier_distance
            fitness = float(inliers.mean())
            rmse = float(np.sqrt(np.mean(d[inliers] ** 2))) if inliers.any() else 0.0
            if fitness > best_fitness or (fitness == best_fitness and rmse < best_rmse):
                best_fitness, best_rmse, best_transform = fitness, rmse, candidate
        if best_fitness > 0:
            w = best_fitness
            if 1.0 - (1.0 - w**p.sample_size) ** iterations >= p.confidence:
                break

    if best_fitness < 0:
        return RegistrationResult(geo.identity(), 0.0, 0.0, iterations, converged=False)
    return RegistrationResult(best_transform, best_fitness, best_rmse, iterations)


def _point_to_plane_step(src_pts, tgt_pts, tgt_nrm) -> geo.RigidTransform:
    """Linearized small-angle least squares for sum(((R p + t - q) . n)^2)."""
    r = np.einsum("ij,ij->i", src_pts - tgt_pts, tgt_nrm)
    a = np.hstack([np.cross(src_pts, tgt_nrm), tgt_nrm])
    x, *_ = np.linalg.lstsq(a, -r, rcond=None)
    omega, t = x[:3], x[3:]
    angle = np.linalg.norm(omega)
    if angle < 1e-300:
        rot = geo.identity()
    else:
        rot = geo.rotation_about_axis(omega / angle, angle)
    return geo.RigidTransform(rot.rotation, t)


def icp_refine(
    source: PointCloud,
    target: PointCloud,
    init: geo.RigidTransform,
    p: IcpParams,
) -> RegistrationResult:
    """Iterative closest point from `init`: alternate gated nearest-neighbor
    correspondences and a closed-form update (Kabsch or linearized
    point-to-plane). A step is accepted only if it does not increase the
    variant's RMSE over the current correspondence set; stops on max
    iterations or a relative RMSE change below threshold."""
    if len(source) == 0 or len(target) == 0:
        raise TooFewPointsError("source and target must be nonempty")
    variant = p.variant
    if variant == "auto":
        variant = "point_to_plane" if target.has_normals else "point_to_point"
    if variant == "point_to_plane" and not target.has_normals:
        raise MissingNormalsError("point-to-plane ICP needs target normals")

    tree = cKDTree(target.positions)
    transform = init
    accepted = 0
    prev_rmse = None
    fitness = 0.0
    rmse = 0.0
    converged = False
    history = []

    def gated(t):
        moved = geo.apply(t, source.positions)
        d, j = tree.query(moved, distance_upper_bound=p.max_correspondence_distance)
        mask = np.isfinite(d)
        return moved, d, j, mask

    for _ in range(p.max_iterations):
        moved, d, j, mask = gated(transform)
        if not mask.any():
            return RegistrationResult(
                transform, 0.0, 0.0, accepted, converged=False, history=tuple(history)
            )
        fitness = float(mask.mean())
        rmse = float(np.sqrt(np.mean(d[mask] ** 2)))
        if prev_rmse is not None and abs(prev_rmse - rmse) <= max(
            p.relative_rmse * prev_rmse, 1e-16
        ):
            converged = True
            break
        prev_rmse = rmse

        src_pts = moved[mask]
        tgt_pts = target.positions[j[mask]]
        if variant == "point_to_point":
            try:
                delta = kabsch(src_pts, tgt_pts)
            except DegenerateConfigurationError:
                break
            metric_before = rmse
            after_pts = geo.apply(delta, src_pts)
            metric_after = float(np.sqrt(np.mean(np.sum((after_pts - tgt_pts) ** 2, axis=1))))
        else:
            tgt_nrm = target.normals[j[mask]]
            delta = _point_to_plane_step(src_pts, tgt_pts, tgt_nrm)
            res = np.einsum("ij,ij->i", src_pts - tgt_pts, tgt_nrm)
            metric_before = float(np.sqrt(np.mean(res**2)))
            after_pts = geo.apply(delta, src_pts)
            res_after = np.einsum("ij,ij->i", after_pts - tgt_pts, tgt_nrm)
            metric_after = float(np.sqrt(np.mean(res_after**2)))
        history.append((metric_before, metric_after))
        if metric_after > metric_before:
            break  # step would increase error on the current set: reject and stop
        transform = geo.compose(delta, transform)
        accepted += 1

    # final quality at the returned transform
    _, d, j, mask = gated(transform)
    if mask.any():
        fitness = float(mask.mean())
        rmse = float(np.sqrt(np.mean(d[mask] ** 2)))
    else:
        fitness, rmse = 0.0, 0.0
    return RegistrationResult(
        transform, fitness, rmse, accepted, converged=converged, history=tuple(history)
    )


def _outward_normals(cloud: PointCloud, k: int) -> PointCloud:
    """Normals oriented away from the centroid (approximately outward)."""
    with_n = estimate_normals(cloud, k=k, viewpoint=cloud.positions.mean(axis=0))
    return cloud.with_normals(-with_n.normals)


def _descriptor_normals(cloud: PointCloud, k: int) -> PointCloud:
    """Normals for FPFH: always the k-NN covariance estimate, so both sides of
    a registration see identically smoothed geometry (mixing exact CAD normals
    with estimated scene normals skews the histograms apart). Orientation sign
    comes from the cloud's own normals when present, else away-from-centroid."""
    k = min(k, max(3, len(cloud) - 1))
    est = estimate_normals(
        PointCloud(cloud.positions), k=k, viewpoint=cloud.positions.mean(axis=0)
    )
    normals = -est.normals  # away from centroid
    if cloud.has_normals:
        sign = np.sign(np.einsum("ij,ij->i", normals, cloud.normals))
        sign[sign == 0] = 1.0
        normals = normals * sign[:, None]
    return cloud.with_normals(normals)


@dataclass(frozen=True)
class GlobalRegistrationParams:
    voxel: float = 0.005
    normals_k: int = 30
    fpfh_radius_factor: float = 5.0
    ransac: RansacParams = field(default_factory=lambda: RansacParams(inlier_distance=0.0075))
    icp: IcpParams = field(default_factory=lambda: IcpParams(max_correspondence_distance=0.0125))


def global_register(
    source: PointCloud,
    target: PointCloud,
    params: GlobalRegistrationParams,
) -> tuple[RegistrationResult, RegistrationResult]:
    """Full coarse-to-fine alignment: voxel downsample both clouds, estimate
    normals and FPFH, RANSAC on the downsampled pair, then ICP refinement on
    the full-resolution clouds. Returns (refined, coarse) results.

    Descriptor matching needs normals that are (a) estimated the same way on
    both clouds and (b) consistently outward. Both downsampled copies get
    fresh k-NN normals; caller-provided normals, when present, fix only the
    orientation sign (the model carries exact outward face normals, scene
    segments carry visibility-oriented ones)."""
    src_down = _descriptor_normals(voxel_downsample(source, params.voxel), params.normals_k)
    tgt_down = _descriptor_normals(voxel_downsample(target, params.voxel), params.normals_k)
    radius = params.fpfh_radius_factor * params.voxel
    src_desc = compute_fpfh(src_down, radius)
    tgt_desc = compute_fpfh(tgt_down, radius)
    coarse = ransac_register(src_down, tgt_down, src_desc, tgt_desc, params.ransac)
    icp_target = target
    wants_normals = params.icp.variant in ("auto", "point_to_plane")
    if wants_normals and not target.has_normals and len(target) > 3:
        icp_target = _outward_normals(target, min(params.normals_k, len(target) - 1))
    refined = icp_refine(source, icp_target, coarse.transform, params.icp)
    return refined, coarse
