"""Per-demonstration temporal pose estimation.

Frame 0 is solved by global registration (RANSAC + ICP); every later frame
seeds ICP with the previous frame's pose, which is cheap and keeps rotation
branches consistent for symmetric end-effectors. Frames whose fitness falls
below the re-registration threshold fall back to global registration and are
tagged; frames with no segmented points copy the previous pose with fitness 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from . import geometry as geo
from .cloud import PointCloud
from .registration import (
    GlobalRegistrationParams,
    IcpParams,
    RansacParams,
    RegistrationResult,
    global_register,
    icp_refine,
)

METHOD_GLOBAL = "global"
METHOD_SEEDED = "seeded"
METHOD_REREGISTERED = "re-registered"
METHOD_COPIED = "copied"  # empty segmentation: previous pose carried over


class EmptyFrameError(ValueError):
    pass


class SymmetryValidationError(ValueError):
    pass


@dataclass(frozen=True)
class SymmetryGroup:
    """Rigid self-maps of the end-effector model; identity always included."""

    transforms: tuple = (None,)

    def __post_init__(self):
        ts = self.transforms
        if not ts or ts[0] is None:
            ts = (geo.identity(),) + tuple(t for t in ts if t is not None)
        object.__setattr__(self, "transforms", tuple(ts))

    def __len__(self) -> int:
        return len(self.transforms)

    @property
    def is_trivial(self) -> bool:
        return len(self.transforms) == 1

    @classmethod
    def trivial(cls) -> "SymmetryGroup":
        return cls((geo.identity(),))

    @classmethod
    def rotational(cls, axis, order: int) -> "SymmetryGroup":
        """Cyclic group of `order` rotations about `axis` through the origin."""
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        return cls(
            tuple(
                geo.rotation_about_axis(axis, 2.0 * math.pi * k / order) for k in range(order)
            )
        )

    @property
    def min_nontrivial_angle(self) -> float:
        """Smallest rotation angle of a non-identity element (pi for trivial)."""
        angles = [
            geo.rotation_geodesic(geo.identity(), g) for g in self.transforms[1:]
        ]
        return min(angles) if angles else math.pi

    def validate_model(self, model: PointCloud, tol: float = 1e-6) -> None:
        """Check each element maps the model cloud onto itself within a
        Hausdorff distance `tol` (both directions)."""
        if len(model) == 0:
            raise SymmetryValidationError("model cloud is empty")
        tree = cKDTree(model.positions)
        for g in self.transforms[1:]:
            moved = geo.apply(g, model.positions)
            d_fwd, _ = tree.query(moved)
            d_back, _ = cKDTree(moved).query(model.positions)
            hausdorff = max(float(d_fwd.max()), float(d_back.max()))
            if hausdorff > tol:
                raise SymmetryValidationError(
                    f"symmetry element moves the model cloud by Hausdorff "
                    f"{hausdorff:.2e} m (> {tol:.0e}); the model cloud must be "
                    f"sampled symmetrically (see symmetrize_model_cloud)"
                )

    def symmetrize_model_cloud(self, cloud: PointCloud) -> PointCloud:
        """Replicate the cloud through every group element so the point set is
        exactly self-consistent under the group."""
        if self.is_trivial:
            return cloud
        parts = [geo.apply(g, cloud.positions) for g in self.transforms]
        positions = np.concatenate(parts)
        colors = np.tile(cloud.colors, (len(self), 1)) if cloud.has_colors else None
        normals = None
        if cloud.has_normals:
            normals = np.concatenate([cloud.normals @ g.rotation.T for g in self.transforms])
        return PointCloud(positions, colors, normals)


def resolve_symmetry(
    pose: geo.RigidTransform, prev: geo.RigidTransform, g: SymmetryGroup
) -> geo.RigidTransform:
    """Pick pose∘g_i closest to `prev` in rotation geodesic (ties by group order)."""
    best = None
    best_angle = math.inf
    for element in g.transforms:
        candidate = geo.compose(pose, element)
        angle = geo.rotation_geodesic(candidate, prev)
        if angle < best_angle:
            best, best_angle = candidate, angle
    return best


@dataclass(frozen=True)
class TrackingParams:
    voxel: float = 0.005
    normals_k: int = 30
    fpfh_radius_factor: float = 5.0
    ransac: RansacParams = field(default_factory=lambda: RansacParams(inlier_distance=0.0075))
    icp: IcpParams = field(default_factory=lambda: IcpParams(max_correspondence_distance=0.0125))
    reregistration_fitness: float = 0.3

    def global_params(self, seed_offset: int = 0) -> GlobalRegistrationParams:
        return GlobalRegistrationParams(
            voxel=self.voxel,
            normals_k=self.normals_k,
            fpfh_radius_factor=self.fpfh_radius_factor,
            ransac=replace(self.ransac, seed=self.ransac.seed + seed_offset),
            icp=self.icp,
        )


@dataclass(frozen=True)
class PoseTrackEntry:
    frame_index: int
    pose: geo.RigidTransform
    fitness: float
    inlier_rmse: float
    method: str

    def to_json_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "q": [float(c) for c in self.pose.quat],
            "t": [float(c) for c in self.pose.translation],
            "fitness": float(self.fitness),
            "inlier_rmse": float(self.inlier_rmse),
            "method": self.method,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "PoseTrackEntry":
        return cls(
            frame_index=int(d["frame_index"]),
            pose=geo.transform_from_quat(d["q"], d["t"]),
            fitness=float(d["fitness"]),
            inlier_rmse=float(d["inlier_rmse"]),
            method=str(d["method"]),
        )


@dataclass(frozen=True)
class PoseTrack:
    entries: tuple

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, i) -> PoseTrackEntry:
        return self.entries[i]

    def poses(self) -> list[geo.RigidTransform]:
        return [e.pose for e in self.entries]

    def count_method(self, method: str) -> int:
        return sum(1 for e in self.entries if e.method == method)


def track_sequence(
    frames: list[PointCloud],
    model: PointCloud,
    group: SymmetryGroup,
    params: TrackingParams,
) -> PoseTrack:
    """Estimate one pose per segmented frame cloud.

    Global registration runs exactly once on frame 0 plus once per
    re-registration fallback; every other frame is ICP seeded with the
    previous pose, then snapped to the symmetry branch nearest that pose.
    """
    if not frames:
        raise ValueError("need at least one frame")
    if len(model) == 0:
        raise ValueError("model cloud is empty")
    if not group.is_trivial:
        group.validate_model(model)

    entries: list[PoseTrackEntry] = []
    prev_pose: geo.RigidTransform | None = None
    for t, frame in enumerate(frames):
        if len(frame) == 0:
            if prev_pose is None:
                raise EmptyFrameError("frame 0 has no segmented points")
            entries.append(PoseTrackEntry(t, prev_pose, 0.0, 0.0, METHOD_COPIED))
            continue

        if prev_pose is None:
            result, _ = global_register(model, frame, params.global_params())
            method = METHOD_GLOBAL
        else:
            result = icp_refine(model, frame, prev_pose, params.icp)
            method = METHOD_SEEDED
            if result.fitness < params.reregistration_fitness:
                result, _ = global_register(model, frame, params.global_params(seed_offset=t))
                method = METHOD_REREGISTERED

        pose = result.transform
        if prev_pose is not None:
            pose = resolve_symmetry(pose, prev_pose, group)
        entries.append(PoseTrackEntry(t, pose, result.fitness, result.inlier_rmse, method))
        prev_pose = pose
    return PoseTrack(tuple(entries))
