"""Per-demonstration pipeline assembly and pose-shift action labeling.

Each frame: backproject all views into the world frame, merge, voxel
downsample, isolate the end-effector by color + largest cluster, estimate
normals. The segmented frames go through temporal tracking, and the pose
track is shifted forward one step: the estimated pose at frame t+1 becomes
the action (goal pose) at frame t. The final frame has no goal and produces
no labeled step, so a demonstration of T frames yields T-1 steps.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import geometry as geo
from .cloud import PointCloud, estimate_normals, merge, voxel_downsample
from .config import PipelineConfig, config_hash, config_to_dict
from .dataset import Demonstration
from .mesh import TriangleMesh, sample_uniform
from .segmentation import extract_end_effector
from .tracking import PoseTrack, track_sequence


class TrackTooShortError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledStep:
    index: int
    pose: geo.RigidTransform
    action: geo.RigidTransform
    fitness: float
    flags: tuple

    @property
    def excluded(self) -> bool:
        return bool(self.flags)


@dataclass(frozen=True)
class LabeledDemonstration:
    demo_id: str
    track: PoseTrack
    steps: tuple

    def __len__(self) -> int:
        return len(self.steps)


def shift_actions(track: PoseTrack) -> list[tuple]:
    """Forward shift by one step: pair[t] = (track[t], track[t+1])."""
    if len(track) < 2:
        raise TrackTooShortError(f"need >= 2 frames to shift, got {len(track)}")
    return [(track[t], track[t + 1]) for t in range(len(track) - 1)]


def build_model_cloud(mesh: TriangleMesh, config: PipelineConfig) -> PointCloud:
    """Sample the registration source from the mesh, carrying exact outward
    face normals (the mesh must have consistent counter-clockwise winding).
    With a declared symmetry the samples are replicated through the group so
    the cloud is exactly self-consistent under it."""
    group = config.symmetry_group()
    n = config.model.sample_count
    if group.is_trivial:
        return sample_uniform(mesh, n, seed=config.model.seed, with_normals=True)
    per = max(1, n // len(group))
    base = sample_uniform(mesh, per, seed=config.model.seed, with_normals=True)
    return group.symmetrize_model_cloud(base)


def orient_normals_by_visibility(
    cloud: PointCloud,
    views: list[geo.DepthImage],
    cameras: list[geo.CameraModel],
    tol: float,
) -> PointCloud:
    """Flip each normal toward the camera that sees its point most face-on.

    Visibility comes from the recorded depth maps: a point is visible in a
    view when it projects in-bounds and the stored depth matches its
    camera-frame z within `tol`. A single viewpoint cannot orient a merged
    multi-camera cloud (opposite cameras average out); per-point visibility
    can. Points visible nowhere (noise, dropout) fall back to the most
    aligned camera regardless of occlusion.
    """
    n = len(cloud)
    if n == 0 or not cloud.has_normals:
        return cloud
    normals = cloud.normals.copy()
    best = np.full(n, -np.inf)
    best_sign = np.ones(n)
    fallback = np.full(n, -np.inf)
    fallback_sign = np.ones(n)
    for cam, img in zip(cameras, views):
        u, v, z = geo.project_points(cam, cloud.positions)
        ui = np.rint(u).astype(np.int64)
        vi = np.rint(v).astype(np.int64)
        inb = (z > 1e-9) & (ui >= 0) & (ui < cam.width) & (vi >= 0) & (vi < cam.height)
        dirs = cam.extrinsic.translation[None, :] - cloud.positions
        dirs /= np.linalg.norm(dirs, axis=1)[:, None]
        align = np.einsum("ij,ij->i", normals, dirs)
        strength = np.abs(align)
        sign = np.where(align >= 0, 1.0, -1.0)
        upd = strength > fallback
        fallback[upd] = strength[upd]
        fallback_sign[upd] = sign[upd]
        visible = np.zeros(n, dtype=bool)
        stored = img.depth[vi[inb], ui[inb]]
        passed = np.isfinite(stored) & (np.abs(stored - z[inb]) <= tol)
        visible[np.flatnonzero(inb)[passed]] = True
        upd = visible & (strength > best)
        best[upd] = strength[upd]
        best_sign[upd] = sign[upd]
    sign = np.where(best > -np.inf, best_sign, fallback_sign)
    return cloud.with_normals(normals * sign[:, None])


def segment_frame(
    views: list[geo.DepthImage], cameras: list[geo.CameraModel], config: PipelineConfig
) -> PointCloud:
    """One frame: backproject every view, merge, downsample, segment, normals."""
    clouds = [
        geo.backproject_frame(cam, img, stride=config.stride)
        for cam, img in zip(cameras, views)
    ]
    scene = voxel_downsample(merge(clouds), config.voxel_size)
    segment = extract_end_effector(scene, config.color_filter, config.cluster)
    if len(segment) > config.normals_k:
        viewpoint = np.mean([cam.extrinsic.translation for cam in cameras], axis=0)
        segment = estimate_normals(segment, k=config.normals_k, viewpoint=viewpoint)
        segment = orient_normals_by_visibility(
            segment, views, cameras, tol=3.0 * config.voxel_size
        )
    return segment


def label_demonstration(
    demo: Demonstration, model: PointCloud, config: PipelineConfig
) -> LabeledDemonstration:
    """Run the full pipeline on one demonstration.

    Flagged frames (no segmented points, fitness 0) keep their step in the
    output so labeled length is always T-1; the step carries exclusion flags
    for the export policy instead of being dropped.
    """
    frames = [segment_frame(views, demo.cameras, config) for views in demo.frames]
    track = track_sequence(frames, model, config.symmetry_group(), config.tracking_params())
    steps = []
    for pose_entry, action_entry in shift_actions(track):
        flags = []
        if pose_entry.fitness == 0.0:
            flags.append("pose_unobserved")
        if action_entry.fitness == 0.0:
            flags.append("action_unobserved")
        steps.append(
            LabeledStep(
                index=pose_entry.frame_index,
                pose=pose_entry.pose,
                action=action_entry.pose,
                fitness=pose_entry.fitness,
                flags=tuple(flags),
            )
        )
    return LabeledDemonstration(demo.demo_id, track, tuple(steps))


def step_to_json_dict(step: LabeledStep, config: PipelineConfig) -> dict:
    rec = {
        "t": step.index,
        "pose": ds.transform_to_dict(step.pose),
        "action": ds.transform_to_dict(step.action),
        "fitness": float(step.fitness),
        "aperture": None,  # gripper open/close is not estimated
        "flags": list(step.flags),
        "excluded": bool(step.flags) and config.export.exclude_flagged,
    }
    if config.export.relative_actions:
        delta = geo.compose(geo.invert(step.pose), step.action)
        rec["action_relative"] = ds.transform_to_dict(delta)
    return rec


def write_labeled_demonstration(
    out_dir,
    labeled: LabeledDemonstration,
    config: PipelineConfig,
    model_hash: str,
    cameras_hash: str,
) -> Path:
    demo_dir = Path(out_dir) / labeled.demo_id
    demo_dir.mkdir(parents=True, exist_ok=True)
    ds.write_jsonl(demo_dir / "poses.jsonl", [e.to_json_dict() for e in labeled.track.entries])
    ds.write_jsonl(
        demo_dir / "labels.jsonl", [step_to_json_dict(s, config) for s in labeled.steps]
    )
    manifest = {
        "demo_id": labeled.demo_id,
        "config_hash": config_hash(config),
        "config": config_to_dict(config),
        "seeds": {"ransac": config.ransac.seed, "model": config.model.seed},
        "model_hash": model_hash,
        "cameras_hash": cameras_hash,
        "frames": len(labeled.track),
        "labeled_steps": len(labeled.steps),
    }
    with open(demo_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return demo_dir


def mesh_content_hash(mesh: TriangleMesh) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(mesh.vertices).tobytes())
    h.update(np.ascontiguousarray(mesh.triangles).tobytes())
    return h.hexdigest()


def cameras_content_hash(cameras: list[geo.CameraModel]) -> str:
    return ds.sha256_of_json([ds.camera_to_dict(c) for c in cameras])
