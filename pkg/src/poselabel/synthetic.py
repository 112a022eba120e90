"""Synthetic ground-truth generator: meshes posed along trajectories, rendered
to multi-view RGB-D with sensor noise and clutter, plus symmetry-aware pose
error metrics.

Rendering is point-splat z-buffering: dense uniform surface samples are
projected through each camera and the nearest depth wins per pixel. Splat
density is at least `splats_per_pixel` per expected pixel footprint. All
generation is deterministic per seed, with independent per-frame streams.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import geometry as geo
from .dataset import Demonstration
from .mesh import TriangleMesh, load_mesh, sample_uniform, triangle_areas

GRIPPER_GREEN = (0.1, 0.8, 0.25)


class ScenarioError(ValueError):
    pass


def _derived_seed(seed: int, tag: str) -> int:
    digest = hashlib.sha256(f"{seed}:{tag}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _rng(seed: int, tag: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(_derived_seed(seed, tag))))


# --- procedural meshes --------------------------------------------------------


def box_mesh(center, size) -> TriangleMesh:
    cx, cy, cz = center
    hx, hy, hz = (s / 2.0 for s in size)
    v = np.array(
        [
            [cx - hx, cy - hy, cz - hz], [cx + hx, cy - hy, cz - hz],
            [cx + hx, cy + hy, cz - hz], [cx - hx, cy + hy, cz - hz],
            [cx - hx, cy - hy, cz + hz], [cx + hx, cy - hy, cz + hz],
            [cx + hx, cy + hy, cz + hz], [cx - hx, cy + hy, cz + hz],
        ]
    )
    t = np.array(
        [
            [0, 2, 1], [0, 3, 2], [4, 5, 6], [4, 6, 7],
            [0, 1, 5], [0, 5, 4], [3, 6, 2], [3, 7, 6],
            [0, 4, 7], [0, 7, 3], [1, 2, 6], [1, 6, 5],
        ]
    )
    return TriangleMesh(v, t)


def merge_meshes(meshes: list[TriangleMesh]) -> TriangleMesh:
    vertices = []
    triangles = []
    offset = 0
    for m in meshes:
        vertices.append(m.vertices)
        triangles.append(m.triangles + offset)
        offset += len(m.vertices)
    return TriangleMesh(np.concatenate(vertices), np.concatenate(triangles))


def _rotate_z180(mesh: TriangleMesh) -> TriangleMesh:
    v = mesh.vertices.copy()
    v[:, 0] *= -1.0
    v[:, 1] *= -1.0
    return TriangleMesh(v, mesh.triangles)


def gripper_mesh(symmetric: bool = True) -> TriangleMesh:
    """Parametric parallel-jaw gripper, ~11 cm tall, fingers pointing -z.

    The symmetric variant is exactly invariant under a 180-degree rotation
    about z (finger B is finger A with x and y negated, which is exact in
    floating point). The asymmetric variant adds a side tab on one finger,
    making the registration pose unique.
    """
    palm = box_mesh((0.0, 0.0, 0.0925), (0.09, 0.03, 0.035))
    finger_a = box_mesh((0.035, 0.0, 0.0375), (0.012, 0.025, 0.075))
    parts = [palm, finger_a, _rotate_z180(finger_a)]
    if not symmetric:
        parts.append(box_mesh((0.048, 0.0125, 0.02), (0.012, 0.02, 0.03)))
    return merge_meshes(parts)


# --- cameras and trajectories -------------------------------------------------


def lookat_camera(
    position,
    target,
    fx: float,
    width: int,
    height: int,
    fy: float | None = None,
    up=(0.0, 0.0, 1.0),
    depth_scale: float = 1e-4,
) -> geo.CameraModel:
    """Camera at `position` with optical axis through `target` (CV frame)."""
    pos = np.asarray(position, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - pos
    n = np.linalg.norm(fwd)
    if n == 0:
        raise ValueError("camera position coincides with target")
    z = fwd / n
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    xn = np.linalg.norm(x)
    if xn < 1e-9:
        x = np.cross(z, (0.0, 1.0, 0.0))
        xn = np.linalg.norm(x)
    x /= xn
    y = np.cross(z, x)
    rot = np.column_stack([x, y, z])
    return geo.CameraModel(
        fx=fx,
        fy=fy if fy is not None else fx,
        cx=(width - 1) / 2.0,
        cy=(height - 1) / 2.0,
        width=width,
        height=height,
        extrinsic=geo.RigidTransform(geo.nearest_rotation(rot), pos),
        depth_scale=depth_scale,
    )


def ring_cameras(
    count: int,
    radius: float,
    height: float,
    target=(0.0, 0.0, 0.05),
    fx: float = 280.0,
    width: int = 320,
    image_height: int = 240,
) -> list[geo.CameraModel]:
    cams = []
    for k in range(count):
        az = 2.0 * math.pi * k / count
        pos = (radius * math.cos(az), radius * math.sin(az), height)
        cams.append(lookat_camera(pos, target, fx, width, image_height))
    return cams


def orbit_trajectory(
    frames: int,
    center=(0.0, 0.0, 0.06),
    radius: float = 0.06,
    angle_step_deg: float = 4.0,
    rot_axis=(0.2, 0.3, 0.93),
    rot_step_deg: float = 2.0,
    bob_amplitude: float = 0.015,
) -> list[geo.RigidTransform]:
    """Smooth orbit with accumulated rotation; per-frame motion stays small."""
    out = []
    c = np.asarray(center, dtype=np.float64)
    for t in range(frames):
        th = math.radians(angle_step_deg * t)
        pos = c + np.array(
            [radius * math.cos(th), radius * math.sin(th), bob_amplitude * math.sin(2 * th)]
        )
        rot = geo.rotation_about_axis(rot_axis, math.radians(rot_step_deg * t))
        out.append(geo.RigidTransform(rot.rotation, pos))
    return out


# --- rendering ----------------------------------------------------------------


def render_point_splats(
    cam: geo.CameraModel, points_world: np.ndarray, colors: np.ndarray
) -> tuple[geo.DepthImage, np.ndarray]:
    """Z-buffer world points into a view; returns the image and, per pixel,
    the index of the winning point (-1 where no point landed)."""
    h, w = cam.height, cam.width
    depth = np.full((h, w), np.nan)
    color = np.zeros((h, w, 3))
    winner = np.full((h, w), -1, dtype=np.int64)
    if len(points_world) == 0:
        return geo.DepthImage(depth, color), winner
    u, v, z = geo.project_points(cam, points_world)
    ui = np.rint(u).astype(np.int64)
    vi = np.rint(v).astype(np.int64)
    ok = (z > 1e-9) & (ui >= 0) & (ui < w) & (vi >= 0) & (vi < h)
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return geo.DepthImage(depth, color), winner
    pix = vi[idx] * w + ui[idx]
    order = np.lexsort((idx, z[idx], pix))
    pix_sorted = pix[order]
    firsts = np.flatnonzero(np.r_[True, pix_sorted[1:] != pix_sorted[:-1]])
    win_ids = idx[order][firsts]
    rows, cols = pix_sorted[firsts] // w, pix_sorted[firsts] % w
    depth[rows, cols] = z[idx][order][firsts]
    color[rows, cols] = colors[win_ids]
    winner[rows, cols] = win_ids
    return geo.DepthImage(depth, color), winner


def _splat_count(
    mesh: TriangleMesh, pose: geo.RigidTransform, cams: list[geo.CameraModel], density: float
) -> int:
    area = float(triangle_areas(mesh).sum())
    centroid = geo.apply(pose, mesh.vertices.mean(axis=0))
    coverage = 0.0
    for cam in cams:
        dist = float(np.linalg.norm(centroid - cam.extrinsic.translation))
        dist = max(dist, 0.05)
        coverage = max(coverage, area * cam.fx * cam.fy / dist**2)
    return int(np.clip(math.ceil(density * coverage), 5_000, 2_000_000))


def _apply_sensor_noise(
    img: geo.DepthImage,
    membership: np.ndarray,
    rng: np.random.Generator,
    depth_sigma: float,
    color_sigma: float,
    dropout: float,
) -> tuple[geo.DepthImage, np.ndarray]:
    depth = img.depth.copy()
    color = img.color.copy()
    member = membership.copy()
    valid = np.isfinite(depth) & (depth > 0)
    if depth_sigma > 0:
        noise = rng.normal(scale=depth_sigma, size=depth.shape)
        depth[valid] += noise[valid]
        broken = valid & (depth <= 0)
        depth[broken] = np.nan
        member[broken] = -1
    if color_sigma > 0:
        color = np.clip(color + rng.normal(scale=color_sigma, size=color.shape), 0.0, 1.0)
    if dropout > 0:
        drop = valid & (rng.random(depth.shape) < dropout)
        depth[drop] = np.nan
        member[drop] = -1
    return geo.DepthImage(depth, color), member


def render_depth_image(
    mesh: TriangleMesh,
    pose: geo.RigidTransform,
    cam: geo.CameraModel,
    color=GRIPPER_GREEN,
    depth_noise_sigma: float = 0.0,
    color_noise_sigma: float = 0.0,
    dropout: float = 0.0,
    seed: int = 0,
    splats_per_pixel: float = 20.0,
) -> geo.DepthImage:
    """Render a posed mesh into one RGB-D view; background pixels missing."""
    n = _splat_count(mesh, pose, [cam], splats_per_pixel)
    splats = sample_uniform(mesh, n, seed=_derived_seed(seed, "splats"))
    pts = geo.apply(pose, splats.positions)
    colors = np.tile(np.asarray(color, dtype=np.float64), (n, 1))
    img, winner = render_point_splats(cam, pts, colors)
    img, _ = _apply_sensor_noise(
        img,
        np.where(winner >= 0, 0, -1).astype(np.int8),
        _rng(seed, "noise"),
        depth_noise_sigma,
        color_noise_sigma,
        dropout,
    )
    return img


# --- scenarios ----------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to synthesize one demonstration deterministically."""

    trajectory: list[geo.RigidTransform]
    cameras: list[geo.CameraModel]
    depth_noise_sigma: float = 0.0
    color_noise_sigma: float = 0.0
    clutter_points: int = 0
    green_speck: bool = False
    dropout: float = 0.0
    seed: int = 0
    gripper_color: tuple = GRIPPER_GREEN
    splats_per_pixel: float = 20.0

    def __post_init__(self):
        if self.depth_noise_sigma < 0:
            raise ScenarioError(f"depth_noise_sigma must be >= 0, got {self.depth_noise_sigma}")
        if self.color_noise_sigma < 0:
            raise ScenarioError(f"color_noise_sigma must be >= 0, got {self.color_noise_sigma}")
        if not (0.0 <= self.dropout < 1.0):
            raise ScenarioError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.clutter_points < 0:
            raise ScenarioError(f"clutter_points must be >= 0, got {self.clutter_points}")
        if not self.trajectory:
            raise ScenarioError("trajectory must have at least one pose")
        if not self.cameras:
            raise ScenarioError("at least one camera is required")


def _clutter_cloud(config: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    """Static gray clutter (table plane + boxes), plus the optional green speck."""
    points = np.zeros((0, 3))
    colors = np.zeros((0, 3))
    if config.clutter_points > 0:
        rng = _rng(config.seed, "clutter")
        surfaces = [box_mesh((0.0, 0.0, -0.005), (0.7, 0.7, 0.01))]
        for k in range(4):
            az = math.radians(90.0 * k + 15.0)
            r = float(rng.uniform(0.18, 0.28))
            size = rng.uniform(0.03, 0.08, size=3)
            center = (r * math.cos(az), r * math.sin(az), size[2] / 2.0)
            surfaces.append(box_mesh(center, size))
        clutter_mesh = merge_meshes(surfaces)
        sampled = sample_uniform(
            clutter_mesh, config.clutter_points, seed=_derived_seed(config.seed, "clutter-pts")
        )
        gray = rng.uniform(0.3, 0.7, size=(config.clutter_points, 1))
        jitter = rng.uniform(-0.02, 0.02, size=(config.clutter_points, 3))
        points = sampled.positions
        colors = np.clip(gray + jitter, 0.0, 1.0)
    if config.green_speck:
        rng = _rng(config.seed, "speck")
        speck = np.array([0.16, 0.16, 0.02]) + rng.normal(scale=0.002, size=(20, 3))
        points = np.concatenate([points, speck])
        colors = np.concatenate([colors, np.tile(config.gripper_color, (20, 1))])
    return points, colors


def generate_synthetic_demo(
    mesh: TriangleMesh, config: ScenarioConfig, demo_id: str = "demo_000"
) -> tuple[Demonstration, list[geo.RigidTransform], list[list[np.ndarray]]]:
    """Render the gripper along the trajectory over static clutter.

    Returns the demonstration, the ground-truth trajectory, and per-frame
    per-view membership maps (int8: 0 = gripper pixel, 1 = clutter pixel,
    -1 = missing), which partition valid pixels exactly.
    """
    n_splat = _splat_count(mesh, config.trajectory[0], config.cameras, config.splats_per_pixel)
    model_splats = sample_uniform(mesh, n_splat, seed=_derived_seed(config.seed, "gripper"))
    gripper_colors = np.tile(np.asarray(config.gripper_color, dtype=np.float64), (n_splat, 1))
    clutter_pts, clutter_colors = _clutter_cloud(config)
    colors = np.concatenate([gripper_colors, clutter_colors])
    source = np.concatenate(
        [np.zeros(n_splat, dtype=np.int8), np.ones(len(clutter_pts), dtype=np.int8)]
    )

    frames: list[list[geo.DepthImage]] = []
    memberships: list[list[np.ndarray]] = []
    for t, pose in enumerate(config.trajectory):
        world = np.concatenate([geo.apply(pose, model_splats.positions), clutter_pts])
        views = []
        view_members = []
        for c, cam in enumerate(config.cameras):
            img, winner = render_point_splats(cam, world, colors)
            member = np.where(winner >= 0, source[np.maximum(winner, 0)], -1).astype(np.int8)
            img, member = _apply_sensor_noise(
                img,
                member,
                _rng(config.seed, f"noise:{t}:{c}"),
                config.depth_noise_sigma,
                config.color_noise_sigma,
                config.dropout,
            )
            views.append(img)
            view_members.append(member)
        frames.append(views)
        memberships.append(view_members)
    demo = Demonstration(demo_id, list(config.cameras), frames)
    return demo, list(config.trajectory), memberships


# --- pose errors ----------------------------------------------------------------


@dataclass(frozen=True)
class PoseError:
    translation: float  # meters
    rotation: float  # radians, minimized over the symmetry group

    def __post_init__(self):
        if self.translation < 0 or self.rotation < 0:
            raise ValueError("errors must be >= 0")


def pose_error(estimated: geo.RigidTransform, truth: geo.RigidTransform, group=None) -> PoseError:
    """Translation gap plus symmetry-aware rotation geodesic."""
    translation = float(np.linalg.norm(estimated.translation - truth.translation))
    transforms = group.transforms if group is not None else [geo.identity()]
    rotation = min(geo.rotation_geodesic(geo.compose(estimated, g), truth) for g in transforms)
    return PoseError(translation, rotation)


# --- scenario files -------------------------------------------------------------


@dataclass(frozen=True)
class DemoSpec:
    demo_id: str
    config: ScenarioConfig


@dataclass(frozen=True)
class SyntheticScenario:
    mesh: TriangleMesh
    demos: list[DemoSpec]
    depth_format: str = "png"


def _require(condition: bool, message: str):
    if not condition:
        raise ScenarioError(message)


def load_scenario(path) -> SyntheticScenario:
    """Parse a scenario JSON file; errors name the offending field."""
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{path}: invalid JSON ({e})") from None
    _require(isinstance(spec, dict), f"{path}: scenario must be a JSON object")

    mesh_spec = spec.get("mesh")
    _require(isinstance(mesh_spec, dict), "field 'mesh' must be an object")
    if "path" in mesh_spec:
        mesh_path = Path(mesh_spec["path"])
        if not mesh_path.is_absolute():
            mesh_path = path.parent / mesh_path
        _require(mesh_path.is_file(), f"field 'mesh.path': no such file {mesh_path}")
        mesh = load_mesh(mesh_path)
    elif mesh_spec.get("builtin") == "gripper":
        mesh = gripper_mesh(symmetric=bool(mesh_spec.get("symmetric", True)))
    else:
        raise ScenarioError("field 'mesh' needs either 'path' or builtin 'gripper'")

    cams_spec = spec.get("cameras")
    _require(isinstance(cams_spec, list) and cams_spec, "field 'cameras' must be a nonempty list")
    try:
        cameras = [ds.camera_from_dict(d) for d in cams_spec]
    except (KeyError, TypeError, ValueError) as e:
        raise ScenarioError(f"field 'cameras': {e}") from None

    def scalar(name, default, minimum=None, below_one=False):
        value = spec.get(name, default)
        _require(isinstance(value, (int, float)), f"field {name!r} must be a number")
        if minimum is not None:
            _require(value >= minimum, f"field {name!r} must be >= {minimum}, got {value}")
        if below_one:
            _require(value < 1.0, f"field {name!r} must be < 1, got {value}")
        return float(value)

    shared = dict(
        cameras=cameras,
        depth_noise_sigma=scalar("depth_noise_sigma", 0.0, minimum=0.0),
        color_noise_sigma=scalar("color_noise_sigma", 0.0, minimum=0.0),
        dropout=scalar("dropout", 0.0, minimum=0.0, below_one=True),
        clutter_points=int(scalar("clutter_points", 0, minimum=0)),
        green_speck=bool(spec.get("green_speck", False)),
        gripper_color=tuple(spec.get("gripper_color", GRIPPER_GREEN)),
        splats_per_pixel=scalar("splats_per_pixel", 20.0, minimum=1.0),
    )
    base_seed = int(scalar("seed", 0))

    demos_spec = spec.get("demos")
    _require(isinstance(demos_spec, list) and demos_spec, "field 'demos' must be a nonempty list")
    demos = []
    for i, d in enumerate(demos_spec):
        _require(isinstance(d, dict), f"field 'demos[{i}]' must be an object")
        demo_id = d.get("demo_id", f"demo_{i:03d}")
        traj_spec = d.get("trajectory")
        _require(
            isinstance(traj_spec, list) and traj_spec,
            f"field 'demos[{i}].trajectory' must be a nonempty list of poses",
        )
        try:
            trajectory = [ds.transform_from_dict(p) for p in traj_spec]
        except (KeyError, TypeError, ValueError) as e:
            raise ScenarioError(f"field 'demos[{i}].trajectory': {e}") from None
        seed = int(d.get("seed", _derived_seed(base_seed, f"demo:{i}") % (2**31)))
        demos.append(DemoSpec(demo_id, ScenarioConfig(trajectory=trajectory, seed=seed, **shared)))

    depth_format = spec.get("depth_format", "png")
    _require(depth_format in ("png", "bin"), "field 'depth_format' must be 'png' or 'bin'")
    return SyntheticScenario(mesh=mesh, demos=demos, depth_format=depth_format)


def save_scenario(
    path,
    cameras: list[geo.CameraModel],
    demo_trajectories: dict[str, list[geo.RigidTransform]],
    mesh: dict | None = None,
    **scalars,
) -> None:
    spec = {
        "mesh": mesh or {"builtin": "gripper", "symmetric": True},
        "cameras": [ds.camera_to_dict(c) for c in cameras],
        "demos": [
            {"demo_id": demo_id, "trajectory": [ds.transform_to_dict(p) for p in traj]}
            for demo_id, traj in demo_trajectories.items()
        ],
    }
    spec.update(scalars)
    with open(path, "w") as f:
        json.dump(spec, f, indent=2, sort_keys=True)
        f.write("\n")


def write_ground_truth(demo_dir, trajectory: list[geo.RigidTransform]) -> None:
    records = [
        {"frame_index": t, **ds.transform_to_dict(pose)} for t, pose in enumerate(trajectory)
    ]
    ds.write_jsonl(Path(demo_dir) / "ground_truth.jsonl", records)


def read_ground_truth(demo_dir) -> list[geo.RigidTransform]:
    records = ds.read_jsonl(Path(demo_dir) / "ground_truth.jsonl")
    records.sort(key=lambda r: r["frame_index"])
    return [ds.transform_from_dict(r) for r in records]
